use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags, unreadable or inconsistent configuration.
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sldm::Error),
    #[error(transparent)]
    Nn(#[from] sldm_nn::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl Error {
    /// Process exit status: 2 for usage problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
