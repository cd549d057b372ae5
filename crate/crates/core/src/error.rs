use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("policy enumeration needs {policies} policies, budget is {budget}")]
    BudgetExceeded { policies: u128, budget: u128 },

    #[error("replay buffer not ready: {inserted} transitions inserted, warmup is {warmup}")]
    NotReady { inserted: usize, warmup: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("step() called on a finished episode; call reset() first")]
    EpisodeOver,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
