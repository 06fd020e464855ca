//! Error type shared across the library.

use thiserror::Error;

/// Unified library error.
#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the workspace bounds.
    #[error("point ({0}, {1}) is outside the workspace bounds")]
    OutOfDomain(f64, f64),

    /// A configuration file or parameter set is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Workspace geometry violates a structural requirement.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A numerical operation could not be completed (singular matrix,
    /// non-finite intermediate, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An input collection was empty or otherwise degenerate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// File I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed data encountered while parsing an artifact.
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
