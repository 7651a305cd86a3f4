use std::fmt::Display;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn config(key: &str, e: impl Display) -> Self {
        CliError::Config(format!("{key}: {e}"))
    }

    pub fn numerical(e: impl Display) -> Self {
        CliError::Numerical(e.to_string())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 for usage, config and i/o problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}
