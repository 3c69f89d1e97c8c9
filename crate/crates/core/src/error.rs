use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A matrix could not be factorized even after the jitter ladder was exhausted.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer hit a non-finite objective and could not recover.
    #[error("optimizer diverged (best objective {best_value})")]
    Diverged { best_value: f64, best_params: Vec<f64> },

    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
