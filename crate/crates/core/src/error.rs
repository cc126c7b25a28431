use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected side {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("kernel construction failed: {0}")]
    Kernel(String),

    #[error("fixed point ({x}, {y}) outside 1..={n}")]
    FixedPointOutOfRange { x: usize, y: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("forward cache does not match this network: {0}")]
    StaleCache(String),

    #[error("IDX format error in {path}: {reason}")]
    IdxFormat { path: PathBuf, reason: String },

    #[error("dataset consistency error: {0}")]
    Consistency(String),

    #[error("dataset file missing: {path} (expected one of: {expected})")]
    MissingDataset { path: PathBuf, expected: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("download failed for {url}: {reason}")]
    Fetch { url: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
