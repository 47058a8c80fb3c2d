use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", .path.display())]
    Input { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] qwem_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

/// Attaches the offending path to I/O failures.
pub trait PathContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> PathContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| CliError::Input { path: path.to_path_buf(), source })
    }
}

/// Names the file in core errors too, since those carry no path.
impl<T> PathContext<T> for qwem_core::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| match e {
            qwem_core::Error::Io(source) => CliError::Input { path: path.to_path_buf(), source },
            other => CliError::Data(format!("{}: {other}", path.display())),
        })
    }
}
