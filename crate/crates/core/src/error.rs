use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrand is not finite at {point:?}")]
    IntegrationFailure { point: Vec<f64> },

    #[error("unsupported integration backend: {0}")]
    UnsupportedBackend(String),

    #[error("cost is not integrable against the target measure for atom {atom}")]
    IntegrabilityViolation { atom: usize },

    #[error("hessian is degenerate: cell {cell} has probability {mass:e}")]
    HessianDegenerate { cell: usize, mass: f64 },

    #[error("restricted hessian is singular (largest restricted eigenvalue {eigenvalue:e})")]
    SingularHessian { eigenvalue: f64 },

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        /// Best iterate reached, sum-zero gauge.
        best_potentials: Vec<f64>,
        best_cost: f64,
    },

    #[error("dual face extraction failed: {0}")]
    FaceExtractionBug(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("delta method inapplicable: transport cost is zero")]
    DeltaMethodInapplicable,

    #[error("experiment failed: {failed} of {total} replicates did not solve")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
