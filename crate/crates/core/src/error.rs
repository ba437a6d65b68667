use thiserror::Error;

/// Errors raised by market generation, equilibrium solving and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument or configuration value is out of contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric post-condition (feasibility, slackness) failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for errors caused by bad configuration rather than numerics or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Dimension(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
