use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate bandwidth: all points coincide")]
    DegenerateBandwidth,

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),

    /// Γ_n is singular or badly conditioned; carries the matrix for diagnostics.
    #[error("inference unavailable: condition number of gamma is {condition_number:e}")]
    InferenceUnavailable {
        condition_number: f64,
        gamma: DMatrix<f64>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    #[error("model used before fitting")]
    NotFitted,

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
