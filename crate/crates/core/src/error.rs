use thiserror::Error;

/// Errors raised by the numerical kernels, integrators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (supported range is 2..=12)")]
    UnsupportedDimension(usize),

    #[error("{what}: value {value:.6e} outside domain (limit {limit:.6e})")]
    Domain { what: &'static str, value: f64, limit: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix has non-positive determinant {0:.6e}")]
    NegativeDeterminant(f64),

    #[error("{what} is singular (condition number {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("non-finite value encountered at {0}")]
    NonFinite(String),

    #[error("invalid inertia: lambda[{i}] + lambda[{j}] = {sum} is not positive")]
    InvalidInertia { i: usize, j: usize, sum: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("line search failed (smallest step tried {smallest_step:.3e})")]
    LineSearch { smallest_step: f64 },

    #[error("invalid matrix text: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
