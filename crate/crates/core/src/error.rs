//! Crate-wide error type and exit-code classification.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("sigma must lie in (0,2), got {0}")]
    SigmaOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("monotonicity certificate failed: {0}")]
    Monotonicity(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cache rejected: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code for this error: 2 = usage/config, 3 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_)
            | Error::SigmaOutOfRange(_)
            | Error::InvalidParam(_)
            | Error::Config(_)
            | Error::Cache(_)
            | Error::Io(_) => 2,
            Error::Precondition(_)
            | Error::Monotonicity(_)
            | Error::Singular(_)
            | Error::Numerical(_) => 3,
        }
    }
}
