use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] switchid_core::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for configuration or input problems, 3 for solver failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if is_solver_failure(e) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 4,
        }
    }
}

fn is_solver_failure(e: &switchid_core::Error) -> bool {
    use switchid_core::Error;
    match e {
        Error::Solver { .. } | Error::Divergence { .. } => true,
        Error::Iteration { source, .. } => is_solver_failure(source),
        _ => false,
    }
}
