use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence has no timesteps")]
    EmptySequence,

    #[error("timestamps must be strictly increasing: {0}")]
    Ordering(String),

    #[error("feature {feature} cannot be standardized: {reason}")]
    DegenerateFeature { feature: usize, reason: String },

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("cache does not belong to this model: {0}")]
    StaleCache(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("equivalent computations disagree: {0}")]
    Mismatch(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Broad failure classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Divergence { .. } | Error::UndefinedMetric(_) | Error::Mismatch(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}
