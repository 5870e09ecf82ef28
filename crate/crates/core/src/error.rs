use thiserror::Error;

/// Failure modes shared by every module of the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("state is outside X: {0}")]
    Domain(String),
    #[error("invalid bubble parameters: {0}")]
    Param(String),
    #[error("not resolvable on this grid: {0}")]
    Resolution(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("singular Gram system (det = {det:e})")]
    Degenerate { det: f64 },
    #[error("positivity lost after step: min u = {min_u:e}")]
    Positivity { min_u: f64 },
    #[error("step size collapsed below {dt_min:e} at t = {t}")]
    Stall { t: f64, dt_min: f64 },
    #[error("mask inclusion violated: {0}")]
    Mask(String),
    #[error("invalid double-peak parameters: {0}")]
    Spec(String),
    #[error("first Dirichlet eigenvalue on {{K >= 0}} is not positive: nu1 = {nu1}")]
    Hypothesis { nu1: f64 },
    #[error("slice solution outside the construction regime: alpha = {alpha}, alpha1 = {alpha1}")]
    Sign { alpha: f64, alpha1: f64 },
    #[error("k does not change sign over the window ({} sweep points)", table.len())]
    NoSignChange { table: Vec<(f64, f64)> },
    #[error("regression residual {residual:.3e} exceeds 20% of the fitted signal {signal:.3e}")]
    Fit { residual: f64, signal: f64 },
    #[error("malformed field data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
