use thiserror::Error;

use crate::fitting::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("density is not normalizable (gamma = {gamma}); need -1 < gamma < 1")]
    NonNormalizable { gamma: f64 },

    #[error("model has not been normalized")]
    NotNormalized,

    #[error("quadrature failed{}: estimated error {abs_err:e} exceeds tolerance {tol:e}", at_time(*.t))]
    QuadratureFailure {
        t: Option<f64>,
        abs_err: f64,
        tol: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("finite-difference stencil cannot resolve the derivative: {0}")]
    Stencil(String),

    #[error("computation budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("fit window contains {found} points, need at least {needed}")]
    EmptyWindow { found: usize, needed: usize },

    #[error("non-positive value {value} at index {index} inside the fit window")]
    NonPositiveData { index: usize, value: f64 },

    #[error("no crossing between exponential and power-law components within horizon {horizon}")]
    NoCrossing { horizon: f64 },

    #[error("bin width {width} is narrower than twice the median grid spacing {min}")]
    BinTooNarrow { width: f64, min: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("IRF kernel spans {kernel_bins} bins, too wide for a {n_bins}-bin window")]
    KernelTooWide { kernel_bins: usize, n_bins: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: u64,
        column: usize,
        msg: String,
    },

    #[error("fit did not converge after {} iterations (best reduced chi2 {:.4})", .best.n_iterations, .best.chi2_reduced)]
    NonConvergence { best: Box<FitResult> },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn quad(t: Option<f64>, abs_err: f64, tol: f64) -> Self {
        Error::QuadratureFailure { t, abs_err, tol }
    }
}
