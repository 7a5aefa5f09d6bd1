use thiserror::Error;

/// Errors raised by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BossError {
    #[error("dimension mismatch in {channel}: expected {expected}, got {got}")]
    Dimension {
        channel: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },

    #[error("absolute continuity violated at index {index}: {detail}")]
    AbsoluteContinuity { index: usize, detail: String },

    #[error("missing state labels: {0}")]
    MissingLabels(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, BossError>;

pub(crate) fn dim_err(channel: &str, expected: usize, got: usize) -> BossError {
    BossError::Dimension {
        channel: channel.to_string(),
        expected,
        got,
    }
}
