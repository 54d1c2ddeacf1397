use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by tensor operations, layers, training and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid axis: {0}")]
    InvalidAxis(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    InvalidReduction(Vec<usize>),

    #[error("backward was already called on this tape")]
    TapeConsumed,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("attention recording was not enabled for this forward pass")]
    NotRecorded,

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("epoch {epoch} outside schedule range 0..{total}")]
    InvalidEpoch { epoch: usize, total: usize },

    #[error("non-finite loss in batch {batch}")]
    DivergenceDetected { batch: usize },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
