use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {path}: run `{stage}` first")]
    MissingInput { path: PathBuf, stage: &'static str },

    #[error("report error: {0}")]
    Report(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {msg}")]
    Csv { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] xbar::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }

    /// Machine-readable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::MissingInput { .. } => "missing-input",
            HarnessError::Report(_) => "report",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Core(e) => e.category(),
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::MissingInput { .. } => 3,
            HarnessError::Report(_) => 4,
            HarnessError::Io { .. } | HarnessError::Csv { .. } => 5,
            HarnessError::Core(_) => 6,
        }
    }
}
