use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0} (only 1 and 2 are supported)")]
    UnsupportedDimension(usize),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("cut locus violation at x={x:?}, xbar={xbar:?}")]
    CutLocusViolation { x: Vec<f64>, xbar: Vec<f64> },

    #[error("unsupported derivative order {0} (at most 4 in total)")]
    UnsupportedOrder(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mixed Hessian is singular (condition number {0:e})")]
    SingularHessian(f64),

    #[error("density is not positive: {0}")]
    NonpositiveDensity(String),

    #[error("no h-orthogonal null pair exists: {0}")]
    NullPairUnavailable(String),

    #[error("Newton iteration diverged at node {node} (residual {residual:e})")]
    NewtonDivergence { node: usize, residual: f64 },

    #[error(
        "induced metric is not positive definite at node {node} (smallest eigenvalue {min_eig:e})"
    )]
    SpacelikeViolation { node: usize, min_eig: f64 },

    #[error("Lagrangian angle routes disagree by {0:e}")]
    RouteMismatch(f64),

    #[error("mass mismatch: {0:e} vs {1:e}")]
    MassMismatch(f64, f64),

    #[error("Sinkhorn did not converge in {0} iterations")]
    NonConvergence(usize),

    #[error("insufficient tail for decay fit: {0}")]
    InsufficientTail(String),
}
