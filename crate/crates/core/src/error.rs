use thiserror::Error;

/// Errors raised by grid, arithmetic, geometric and measure operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
