use std::path::PathBuf;

/// Errors of the file formats and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Malformed text input; `line` is 1-based.
    #[error("line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    /// Malformed binary input at a byte offset from the start of the file.
    #[error("byte {offset}: {msg}")]
    ParseByte { offset: u64, msg: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] oacnn_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

impl IoError {
    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| IoError::File { path, source }
    }
}
