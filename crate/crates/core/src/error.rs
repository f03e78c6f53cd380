use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(&'static str),

    #[error("finite-difference step underflows at the current parameters (step = {0})")]
    StepUnderflow(f64),

    #[error("training diverged at iteration {iter}: {what} is not finite")]
    Diverged { iter: usize, what: &'static str },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
