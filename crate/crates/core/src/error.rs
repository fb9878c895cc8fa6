//! Error taxonomy shared by the library and the CLI.
//!
//! The CLI maps [`Error::Config`] to exit code 2 and everything else that
//! aborts a run ([`Error::RuntimeAbort`], I/O, serialization) to exit code 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters rejected before any work runs.
    #[error("config error: {0}")]
    Config(String),

    /// A run started and had to abort (rejection floors, diverging loops).
    #[error("runtime abort: {0}")]
    RuntimeAbort(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn abort(msg: impl Into<String>) -> Self {
        Error::RuntimeAbort(msg.into())
    }

    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
