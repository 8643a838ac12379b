use thiserror::Error;

/// Errors raised by the estimation, selection and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("non-finite gradient encountered at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("solver did not converge after {iterations} iterations (KKT residual {kkt_residual:.3e})")]
    NotConverged { iterations: usize, kkt_residual: f64 },

    #[error("symmetric formulation unidentifiable at lambda 0")]
    Unidentifiable,

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("calibration failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, Error>;
