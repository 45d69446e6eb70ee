use thiserror::Error;

/// Errors reported by the simulation kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("transition matrix is not stochastic: max |column sum - 1| = {max_deviation:e}")]
    NotStochastic { max_deviation: f64 },

    #[error("negative density {value:e} at grid index {index} (tau = {tau})")]
    NegativeDensity { index: usize, value: f64, tau: f64 },

    #[error("threshold {threshold} not reached within {steps} steps")]
    NoCrossing { threshold: f64, steps: usize },

    #[error("krylov recurrence broke down: {0}")]
    KrylovBreakdown(String),

    #[error("trajectory blew up at t = {time}: |q| = {magnitude:e}")]
    BlowUp { time: f64, magnitude: f64 },

    #[error("symmetry sector mixing: off-block residual {residual:e}")]
    SectorMixing { residual: f64 },

    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
