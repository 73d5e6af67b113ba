use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LocoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LocoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed feature file: {0}")]
    MalformedHeader(String),

    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("segment [{start}, {end}) outside [0, {duration}]")]
    SegmentOutOfRange { start: f64, end: f64, duration: f64 },

    #[error("metric needs both classes present, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LocoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LocoError::Io {
            path: path.into(),
            source,
        }
    }
}
