use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("negative Riccati discriminant at gamma = {gamma_eff} (b2^2 - 4 b1 b3 = {discriminant})")]
    NegativeDiscriminant { gamma_eff: f64, discriminant: f64 },

    #[error("domain error in {what} (value {value})")]
    DomainError { what: &'static str, value: f64 },

    #[error("Gaussian validity condition violated at tau = {tau} (1 - 2aV = {margin})")]
    ValidityConditionViolated { tau: f64, margin: f64 },

    #[error("quadrature did not converge on [{lo}, {hi}] (error estimate {estimate})")]
    QuadratureNonConvergence { lo: f64, hi: f64, estimate: f64 },

    #[error("negative discriminant in the Z(0) normalization quadratic ({discriminant})")]
    NegativeQuadraticDiscriminant { discriminant: f64 },

    #[error("non-finite state on path {path} at step {step} (t = {t})")]
    NonFiniteState { path: u64, step: usize, t: f64 },

    #[error("{count} of {total} paths aborted; first: {first}")]
    PathsAborted {
        count: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error("finite-difference grid unstable: {0}")]
    GridInstability(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics themselves (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidParameter { .. } | Error::Io { .. } | Error::Parse { .. }
        )
    }
}
