use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violated an operation's domain (bad probabilities, out-of-range
    /// parameters, invalid token indices, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The remote model could not be reached.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    /// The remote model answered, but not with something we understand.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A persisted artifact (model, vocabulary, session, schema) is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
