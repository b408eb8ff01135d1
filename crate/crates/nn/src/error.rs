use thiserror::Error;

use crate::checkpoint::Checkpoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sldm::Error),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    /// Training stopped; `last_good` holds the state before the failing step.
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, last_good: Box<Checkpoint> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
