use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid meta.json: {0}")]
    Meta(String),
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("size mismatch (expected {expected} bytes, found {found})")]
    SizeMismatch { expected: usize, found: usize },
    #[error("invalid shape {0:?}: every axis must be at least 1")]
    EmptyShape([usize; 3]),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("no instances present")]
    NoInstances,
    #[error("object placement failed after {attempts} attempts ({placed} of {requested} placed)")]
    Placement {
        attempts: usize,
        placed: usize,
        requested: usize,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
