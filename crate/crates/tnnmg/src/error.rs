//! Error type shared by all solver components.

use thiserror::Error;

/// Failure modes of the solver stack.
///
/// `Usage` marks caller mistakes (mismatched structures, invalid parameters),
/// `Numeric` marks floating-point breakdown (NaN/Inf, failed factorizations),
/// and `Internal` marks violated invariants that indicate a broken component,
/// such as a local solver that increased the energy.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
