//! Error type shared across the library.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the size required by the system dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Invalid value for a dimension or configuration field.
    #[error("invalid {what}: {details}")]
    InvalidValue { what: &'static str, details: String },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The per-step implicit solve did not converge.
    #[error("step {step}: implicit solve did not converge after {iters} Newton iterations (residual inf-norm {residual:.3e})")]
    StepSolveFailure {
        step: usize,
        iters: usize,
        residual: f64,
    },

    /// A per-step Jacobian block was singular or too ill-conditioned to solve with.
    #[error("step {step}: block {block} is singular or ill-conditioned (rcond estimate {rcond:.3e})")]
    SingularBlock {
        step: usize,
        block: &'static str,
        rcond: f64,
    },

    /// The exact-Hessian path was requested on a system that only supplies first derivatives.
    #[error("system does not provide second derivatives; the exact-Hessian path is unavailable")]
    SecondDerivativesUnavailable,

    /// The regularization schedule was exhausted without finding a positive definite shift.
    #[error("regularization failed: no positive definite shift with lambda <= {max:.3e}")]
    RegularizationFailure { max: f64 },

    /// Backtracking line search exhausted its budget without sufficient decrease.
    #[error("line search failed after {backtracks} backtracks (objective {objective:.6e}, directional derivative {slope:.3e})")]
    LineSearchFailure {
        backtracks: usize,
        objective: f64,
        slope: f64,
    },

    /// Thread pool construction failed.
    #[error("thread pool: {0}")]
    ThreadPool(String),

    /// A failure inside the outer optimization loop, tagged with the iteration it occurred at.
    #[error("optimization iteration {iter}: {source}")]
    OptimizeFailure {
        iter: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the optimizer iteration it occurred at.
    pub(crate) fn at_iteration(self, iter: usize) -> Error {
        Error::OptimizeFailure {
            iter,
            source: Box::new(self),
        }
    }
}
