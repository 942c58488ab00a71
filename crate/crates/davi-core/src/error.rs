//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The requested quantity is undefined for the given inputs.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced or received non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in a state that does not support it.
    #[error("state error: {0}")]
    State(String),

    /// Configuration validation failed; the message lists every violation.
    #[error("invalid config:\n{0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
