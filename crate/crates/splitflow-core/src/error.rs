//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by latent ops, field evaluation, training, editing,
/// decomposition, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or vector dimensions do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar argument is outside its valid range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (schedules, empty lists, missing entries).
    #[error("config error: {0}")]
    Config(String),

    /// A numeric failure (NaN/Inf) at a known loop step.
    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    /// Mismatched cached state (e.g. backward called with a stale forward cache).
    #[error("state error: {0}")]
    State(String),

    /// Text could not be parsed; the raw text is attached for diagnostics.
    #[error("parse error: {message}")]
    Parse { message: String, raw: String },

    /// Transport-level failure talking to an external endpoint.
    #[error("network error: {0}")]
    Network(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed persisted artifact (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for CLI reporting: 2 config/usage, 3 numeric, 4 external service.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            Error::Network(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
