use thiserror::Error;

use crate::fit::StartOutcome;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix could not be factorized.
    #[error("singular covariance matrix (pivot {pivot})")]
    SingularCovariance { pivot: usize },

    /// Two sites share coordinates, so the dependence matrices are singular.
    #[error("sites `{first}` and `{second}` share coordinates")]
    DuplicateSites { first: String, second: String },

    /// The requested operation is not available for this configuration.
    #[error("unsupported: {0}")]
    Capability(String),

    /// An input violates a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Every optimization start failed; per-start diagnostics are attached.
    #[error("optimization did not converge: {message}")]
    NonConvergence {
        message: String,
        starts: Vec<StartOutcome>,
    },

    /// Too few observations exceed the threshold.
    #[error("only {found} exceedances, at least {required} needed")]
    InsufficientExceedances { found: usize, required: usize },

    /// A matrix expected to be invertible was singular; eigenvalues are reported.
    #[error("singular sensitivity matrix, eigenvalues {eigenvalues:?}")]
    SingularHessian { eigenvalues: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// Malformed input file contents.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
