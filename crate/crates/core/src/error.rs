use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coalescent stays infinite (or cannot be shown to come down): {0}")]
    StaysInfinite(String),

    #[error("checkpoint {0} is not registered on this path")]
    UnregisteredCheckpoint(f64),

    #[error("budget exceeded: {needed} bytes requested, {budget} allowed ({what})")]
    Budget {
        what: String,
        needed: u64,
        budget: u64,
    },

    #[error("malformed event: {0}")]
    MalformedEvent(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidMeasure(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::StaysInfinite(_)
                | Error::UnregisteredCheckpoint(_)
        )
    }
}
