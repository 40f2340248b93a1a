use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid construction parameters (empty coverings, bad bounds, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Operands that belong to different coverings or have mismatched shapes.
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The adaptive integrator could not make progress.
    #[error("step size underflow at t = {time:e} (h = {step:e})")]
    StiffIntegration { time: f64, step: f64 },

    /// Requested accuracy was not reached within the work budget.
    #[error("accuracy error: achieved {achieved:e}, requested {requested:e}")]
    Accuracy { achieved: f64, requested: f64 },

    /// A linear solve failed to converge.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is not finite ({value})")))
    }
}
