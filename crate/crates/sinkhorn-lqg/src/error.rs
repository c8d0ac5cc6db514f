use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violated the symmetry tolerance of [`crate::spd::SpdMatrix`].
    #[error("matrix is not symmetric: relative asymmetry {0:.3e} exceeds 1e-8")]
    NotSymmetric(f64),

    /// An operation required a positive semidefinite matrix.
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.6e} below tolerance {tol:.3e}")]
    NotPsd { min_eig: f64, tol: f64 },

    /// An operation required a positive definite matrix.
    #[error("matrix is not positive definite: min eigenvalue {0:.6e}")]
    NotPd(f64),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("no convergence after {iters} iterations in {context}")]
    NoConvergence { iters: usize, context: String },

    /// Purified-output covariance was singular in the inner policy solve.
    #[error("singular inner system: purified-output covariance is not positive definite")]
    SingularInnerSystem,

    /// Dual bisection could not bracket the constraint multiplier.
    #[error("bracket failure: dual multiplier exceeded {0:.1e} without reaching feasibility")]
    BracketFailure(f64),

    #[error("infeasible ambiguity spec: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
