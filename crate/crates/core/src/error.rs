use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a NIfTI-1 file: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("index {index:?} outside grid of dims {dims:?}")]
    Bounds { index: [i64; 3], dims: [usize; 3] },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid synthetic tree spec: {0}")]
    Spec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
