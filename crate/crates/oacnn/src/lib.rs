//! File formats, the training driver and the `oacnn` command-line tool on top
//! of `oacnn-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
mod error;
pub mod loader;
pub mod manifest;
pub mod metrics_log;
pub mod ply;
pub mod scene;
pub mod text;

pub use error::{IoError, Result};
