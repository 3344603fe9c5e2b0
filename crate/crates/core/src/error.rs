use thiserror::Error;

/// Errors raised across the controller, simulator and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrcError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("system is not stable: spectral radius {rho:.12} is not below 1")]
    Unstable { rho: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "step rate undefined at t={t}: cumulative curvature and regularization are both zero; \
         configure a positive first regularization weight (lambda_1 > 0)"
    )]
    ZeroStepDenominator { t: usize },

    #[error("regularization schedule must be non-increasing and nonnegative (violated at index {index}: {prev} -> {next})")]
    ScheduleNotMonotone { index: usize, prev: f64, next: f64 },

    #[error("no memory length up to {limit} satisfies the tail condition (psi decays too slowly)")]
    MemorySelection { limit: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DrcError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DrcError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
