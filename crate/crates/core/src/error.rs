use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("coordinate {0} does not fit in 32 bits")]
    CoordOverflow(i64),
    #[error("grid size {grid} is not a positive multiple of stride {stride}")]
    InvalidGridSize { grid: u32, stride: u32 },
    #[error("duplicate voxel at {0}")]
    DuplicateVoxel(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    Numeric(&'static str),
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error("tape: {0}")]
    Tape(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: u32, classes: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("incompatible parameters: {0}")]
    Compat(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
