use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stochreg_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("verification failed: {}", .0.join(", "))]
    Verification(Vec<String>),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status: 0 success, 1 I/O or internal, 2 verification
    /// failure, 3 divergence, 4 input error.
    pub fn exit_code(&self) -> i32 {
        use stochreg_core::Error as E;
        match self {
            CliError::Verification(_) => 2,
            CliError::Core(E::Divergence { .. }) => 3,
            CliError::Core(E::Numerical(_)) => 1,
            CliError::Core(_) | CliError::Input(_) | CliError::Json(_) => 4,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}
