use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Evaluation at a time where the closed form is singular (t >= 1).
    #[error("singular time t = {0}: expression requires t < 1")]
    SingularTime(f64),

    #[error("observed covariance block is singular")]
    SingularCovariance,

    #[error("quadrature did not converge: achieved {achieved:e}, wanted {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    /// Non-finite loss during training.
    #[error("non-finite loss at step {step} (batch stream {batch_stream})")]
    NonFiniteLoss { step: usize, batch_stream: String },

    /// Non-finite state while integrating a path.
    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
