use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular: pivot {pivot:.3e} at index {index} below tolerance {tolerance:.3e}")]
    Singular {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("degenerate rank-one update: 1 + w·vᵀA⁻¹v = {denominator:.3e}")]
    DegenerateUpdate { denominator: f64 },

    #[error("update would leave the matrix indefinite (1 + w·vᵀA⁻¹v = {denominator:.3e})")]
    NotPositiveDefinite { denominator: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{method} needs {what}, which the candidate pool does not carry")]
    MissingMetadata { method: &'static str, what: &'static str },

    #[error("id {id} out of range (< {bound})")]
    OutOfRange { id: usize, bound: usize },

    #[error("no feasible removal left with {remaining} items (target {target})")]
    Infeasible { remaining: usize, target: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
