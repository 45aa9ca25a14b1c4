use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, invalid hyper-parameters, vocab mismatches.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller violated an operation precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value showed up where it must not.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
