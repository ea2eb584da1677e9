use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("degenerate (zero-norm) vector at index {index}")]
    DegenerateVector { index: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupted chunk {chunk}: {reason}")]
    CorruptChunk { chunk: usize, reason: String },

    #[error("corrupted file: {0}")]
    Corrupt(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("augmentation payload unavailable: {0}")]
    AugmentationUnavailable(String),

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bytes on disk or in a payload not matching
    /// what was written.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            Error::Decode(_) | Error::Format(_) | Error::CorruptChunk { .. } | Error::Corrupt(_)
        )
    }
}
