//! Simulation and fitting harness behind the `drmksd` binary.
//!
//! Seeds: `simulate` and `fit` draw data from `seed` and split folds with
//! `child_seed(seed, 1)`. Replication r of `replicate` behaves like `fit`
//! with `seed = child_seed(seed, r)`.

pub mod config;
pub mod harness;

use std::fmt;

use drmksd::error::Error;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub code: i32,
    pub error: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, error: "invalid_argument", message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error, self.message)
    }
}

impl std::error::Error for CliError {}

/// Short machine-readable name for a core error.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::DegenerateBandwidth => "degenerate_bandwidth",
        Error::NonConvergence(_) => "non_convergence",
        Error::EstimationImpossible(_) => "estimation_impossible",
        Error::InferenceUnavailable { .. } => "inference_unavailable",
        Error::Numerical(_) => "numerical",
        Error::InternalConsistency(_) => "internal_consistency",
        Error::NotFitted => "not_fitted",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Parse { .. } | Error::Io(_) => {
                EXIT_USAGE
            }
            Error::EstimationImpossible(_) => EXIT_ESTIMATION,
            _ => EXIT_NUMERICAL,
        };
        Self { code, error: error_kind(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}
