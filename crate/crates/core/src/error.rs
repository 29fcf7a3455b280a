use thiserror::Error;

use crate::flow::FlowTrace;
use crate::soliton::ConvergenceReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "bracket is not nilpotent (descending central series stabilizes at dimension {stable_dim})"
    )]
    NotNilpotent { stable_dim: usize },

    #[error(
        "matrix is singular within tolerance (smallest/largest singular value ratio {ratio:.3e})"
    )]
    SingularMatrix { ratio: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operation requires a nonzero bracket")]
    ZeroBracket,

    #[error("closed-form metric requires nilpotency degree <= 2, got {degree}")]
    DegreeTooHigh { degree: usize },

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow {
        t: f64,
        h: f64,
        trace: Option<Box<FlowTrace>>,
    },

    #[error("normalized flow needs |mu| = 2, initial norm is {norm:.12}")]
    BadNormalization { norm: f64 },

    #[error("inner product left the positive-definite cone at t = {t:.6e}")]
    LossOfPositivity { t: f64 },

    #[error("need at least {needed} samples, trace has {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("normalized flow has not converged (tangential gradient {gradient:.3e}, spread {spread:.3e})", gradient = .0.gradient_norm_at_limit, spread = .0.cauchy_spread)]
    NotConverged(Box<ConvergenceReport>),

    #[error("invalid input: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
