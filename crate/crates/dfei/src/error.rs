//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not chain consistently.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed input data (CSV rows, labels, ids). Carries enough
    /// context to locate the offending record.
    #[error("data error: {0}")]
    Data(String),

    /// An operation was called in a state that does not permit it,
    /// e.g. integrating over an uninitialized domain feature bank.
    #[error("state error: {0}")]
    State(String),

    /// A non-finite value surfaced where the contract requires finite
    /// numbers (NaN/Inf loss, exploding update).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Run configuration is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint file failed to load (corruption, version or hash
    /// mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// An I/O failure with human context (path, operation) attached.
    pub fn io(msg: impl Into<String>) -> Error {
        Error::Io(std::io::Error::other(msg.into()))
    }

    /// Process exit code for the CLI: 2 config/usage, 3 data/checkpoint,
    /// 4 numeric or internal state failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) => 3,
            Error::Shape(_) | Error::State(_) | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
