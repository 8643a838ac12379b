use thiserror::Error;

/// Failures of a CLI command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Convergence(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] subtype_lasso::Error),
}

impl CliError {
    /// 0 success, 1 usage, 2 data, 3 convergence, 4 verification.
    pub fn exit_code(&self) -> i32 {
        use subtype_lasso::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io(_) | CliError::Json(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Unidentifiable => 1,
                E::NotConverged { .. } | E::NonFiniteGradient { .. } => 3,
                E::Dimension(_) | E::InvalidData(_) | E::Degenerate(_) | E::Calibration(_) => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
