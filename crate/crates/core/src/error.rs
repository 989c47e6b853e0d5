//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, counts or indices that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// A numeric argument outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite value produced during local optimisation.
    #[error("numerical error at SGD step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    /// The requested combination of features is not supported.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Scenario or report validation failure, naming the offending field.
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },

    /// Error raised by one client during a round.
    #[error("client {client} failed in round {round}: {source}")]
    Client {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (as opposed to failures while running).
    ///
    /// The CLI maps these to exit code 1 and everything else to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Structural(_)
            | Error::Domain(_)
            | Error::Unsupported(_)
            | Error::Invalid { .. }
            | Error::Parse { .. } => true,
            Error::Client { source, .. } => source.is_validation(),
            Error::Numerical { .. } | Error::Io { .. } => false,
        }
    }
}
