use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    Numeric(&'static str),
    #[error("enumeration of {combinations} supports exceeds the limit of {limit}")]
    Capacity { combinations: u128, limit: u128 },
    #[error("reconstruction error is undefined for an all-zero reference vector")]
    UndefinedMetric,
    #[error("spec error in `{field}`: {message}")]
    Spec { field: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
