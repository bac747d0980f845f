//! Error type shared by all simulator modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument value (counts, probabilities, step sizes, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Inconsistent configuration (dimension mismatches, bad mode combos).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Structural problem in a graph or dataset (isolated node, ...).
    #[error("structural error: {0}")]
    Structure(String),

    /// Malformed input file; carries the 1-based line number when known.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Operation requires state that was not recorded (e.g. forward cache).
    #[error("state error: {0}")]
    State(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { line, msg: msg.into() }
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
