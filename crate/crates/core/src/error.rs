//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by geometry, training, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor or image shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that requires points received an empty cloud.
    #[error("empty point cloud")]
    EmptyCloud,

    /// A scene has fewer points than the operation needs.
    #[error("too few points: have {have}, need at least {need}")]
    TooFewPoints { have: usize, need: usize },

    /// A loss or gradient became non-finite.
    #[error("non-finite value encountered in {context} at step {step}")]
    NonFinite { context: String, step: u64 },

    /// Checkpoint or file format violation.
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint architecture digest does not match the requested config.
    #[error("architecture digest mismatch: checkpoint {found:#018x}, config {expected:#018x}")]
    DigestMismatch { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
