use thiserror::Error;

/// Errors raised by the numerical kernels.
///
/// Report-style operations (probes, checks) never return these for a failed
/// property; they encode the failure in their report instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("two-phase law evaluated without a phase sample")]
    MissingPhase,

    #[error("phase index {0} out of range for a two-phase law")]
    BadPhase(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator is not maximal: {0}")]
    NotMaximal(String),

    #[error("{what} did not converge after {iterations} iterations (last value {last})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error(
        "fixed-point iteration stalled after {iterations} iterations: residual {residual:e}, observed contraction {contraction}"
    )]
    Stalled {
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("class violation: f(x,y) - <y,x> = {gap:e} < 0")]
    ClassViolation { gap: f64 },

    #[error("representative function has no coercivity certificate")]
    MissingCoercivity,

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("window of size {window} exceeds grid side {side}")]
    WindowTooLarge { window: usize, side: usize },

    #[error("duality gap {gap:e} exceeds tolerance {tol:e}; solution not certified")]
    NonCertified { gap: f64, tol: f64 },

    #[error("laws with zero strict-monotonicity modulus are rejected by this solver")]
    NotStrictlyMonotone,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
