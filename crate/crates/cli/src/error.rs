use std::path::Path;

use thiserror::Error;

/// Command failure, mapped onto the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Stationary(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Stationary(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    /// Wraps a library error raised while handling `path`.
    pub fn at(path: &Path, err: chainmix::Error) -> Self {
        let msg = format!("{}: {err}", path.display());
        match err {
            chainmix::Error::Io(_) => CliError::Io(msg),
            chainmix::Error::NotConverged { .. } => CliError::Stationary(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<chainmix::Error> for CliError {
    fn from(err: chainmix::Error) -> Self {
        match err {
            chainmix::Error::Io(e) => CliError::Io(e.to_string()),
            e @ chainmix::Error::NotConverged { .. } => CliError::Stationary(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}
