use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] facesym_core::Error),

    #[error("cannot read config {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    /// Stages that have not produced their artifacts yet.
    #[error("run in {dir} is incomplete, missing stages: {}", .missing.join(", "))]
    Incomplete { dir: PathBuf, missing: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit code: 1 configuration or other error, 2 transport,
    /// 3 incomplete run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_transport() => 2,
            CliError::Incomplete { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub fn config_error(message: impl Into<String>) -> CliError {
    CliError::Core(facesym_core::Error::Config(message.into()))
}
