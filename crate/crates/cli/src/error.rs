use std::path::{Path, PathBuf};

use mixcourse_core::Error as CoreError;

/// Failures of a command, each mapped to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 input or schema error, 3 numerical divergence, 4 IO error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Parse { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_path_buf(), message: message.into() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Schema(_) => CliError::Input(e.to_string()),
            CoreError::Domain(_) | CoreError::Divergence { .. } => CliError::Numerical(e.to_string()),
        }
    }
}
