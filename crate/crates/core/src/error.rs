use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Input that carries no information for the operation (e.g. a constant spectrum).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    /// An architecture that violates the layer arithmetic.
    #[error("invalid architecture: {0}")]
    Arch(String),
    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step} (lr {lr:e}, loss {loss})")]
    NonFiniteLoss { step: u64, lr: f64, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! domain {
    ($($arg:tt)*) => {
        $crate::error::Error::Domain(alloc::format!($($arg)*))
    };
}
pub(crate) use domain;
