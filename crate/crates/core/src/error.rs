use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step {step} outside valid range {lo}..={hi}")]
    StepRange { step: usize, lo: usize, hi: usize },
    #[error("expected {expected} channel(s), got {got}")]
    Channels { expected: usize, got: usize },
    #[error("non-finite value produced at reverse step {step}")]
    NonFinite { step: usize },
    #[error("statistics: {0}")]
    Statistics(String),
    #[error("empty region of interest: {0}")]
    EmptyRegion(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn dims(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
