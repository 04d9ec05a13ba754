use thiserror::Error;

/// Errors produced by the numerical core.
///
/// Dimension mismatches on internal tape operations are treated as
/// programming errors and panic with the offending shapes; the variants here
/// cover data-dependent failures and invalid user-facing configuration.
#[derive(Debug, Error)]
pub enum Error {
    /// A Cholesky pivot was non-positive. Carries the index of the failing
    /// pivot so callers can report how far the factorization got.
    #[error("matrix is not positive definite (pivot {pivot} <= 0)")]
    NotPositiveDefinite { pivot: usize },

    /// Input to `cholesky` violated the symmetry precondition.
    #[error("matrix is not symmetric within tolerance {tol}")]
    NotSymmetric { tol: f64 },

    /// Operand shapes do not conform.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// `backward` was called on a node that is not 1x1.
    #[error("gradient root must be scalar (1x1), got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    /// A non-finite value escaped a numerical operation.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Model composition violates a structural invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Invalid argument to a library entry point.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
