use thiserror::Error;

/// Errors produced by model construction, scoring and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{matrix} is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { matrix: String, max_asymmetry: f64 },

    #[error("{matrix} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { matrix: String, min_eigenvalue: f64 },

    #[error("matrix is singular or numerically not invertible")]
    Singular,

    #[error("eigen-decomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("zero-norm vector has no direction: {0}")]
    ZeroNorm(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint covariance of size {size} exceeds the oracle limit of {limit}")]
    OracleEnvelope { size: usize, limit: usize },

    #[error("cell dim={dim} sigma={sigma} round={round}: {source}")]
    Cell {
        dim: usize,
        sigma: f64,
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
