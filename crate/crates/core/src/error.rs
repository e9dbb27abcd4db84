//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A model or argument violates a documented constraint.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The matrix series behind a density or generating function cannot be
    /// certified to converge.
    #[error("divergent representation: {0}")]
    Divergence(String),

    /// A numerical routine failed (singular system, no convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Two independent evaluation routes disagreed beyond tolerance.
    #[error("internal consistency check failed: {what} (first = {first:e}, second = {second:e})")]
    Consistency {
        what: String,
        first: f64,
        second: f64,
    },

    /// Rejection sampling ran out of attempts.
    #[error(
        "acceptance failure: {attempts} attempts exhausted for one sample; \
         analytic acceptance probability P[T>1] = {analytic:e}"
    )]
    Acceptance { attempts: u64, analytic: f64 },

    /// An observation has probability zero under the current parameters.
    #[error("impossible observation y = {value}: alpha P^y 1 = 0")]
    ImpossibleObservation { value: u64 },

    /// Malformed file content.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
