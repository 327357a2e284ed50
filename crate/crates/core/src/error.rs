use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate model: {0}")]
    InvalidModel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation not supported for this interaction: {0}")]
    Unsupported(String),

    #[error("state {state} exceeds truncation level {k}")]
    Truncation { state: u64, k: usize },

    #[error("truncation overflow: {mass:e} mass at the cap exceeds tolerance {tol:e}")]
    TailOverflow { mass: f64, tol: f64 },

    #[error("enumeration too large: {states} joint states (limit {limit})")]
    EnumerationOverflow { states: usize, limit: usize },

    #[error("event budget of {budget} exceeded at t = {t}")]
    EventBudget { budget: u64, t: f64 },

    #[error("integration unstable at t = {t}: {reason}")]
    Stability { t: f64, reason: String },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("non-positive value {value} at index {index} in fit window")]
    NonPositive { index: usize, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
