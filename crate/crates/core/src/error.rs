use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum SbsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pattern error: {0}")]
    Pattern(String),

    #[error("configuration has zero amplitude")]
    ZeroAmplitude,

    #[error("system too large for exact treatment: {states} basis states (limit {limit})")]
    TooLarge { states: u128, limit: u128 },

    #[error("no nonzero-amplitude starting configuration found after {0} attempts")]
    NoStartConfiguration(usize),

    #[error("non-finite parameter update")]
    NonFinite,

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("eigensolver did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint version mismatch: expected SBSv1, found {0}")]
    Version(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SbsError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SbsError {
    SbsError::InvalidInput(msg.into())
}
