use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, sampler or command configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the domain of a density or transform.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed input file.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
