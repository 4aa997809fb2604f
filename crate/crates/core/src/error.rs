use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular nodal system: {0}")]
    Singular(String),

    #[error("nonlinear device iteration did not converge after {} iterations (max voltage change per iteration: {trace:?})", trace.len())]
    Convergence { trace: Vec<f64> },

    #[error(
        "non-ideality factor undefined: no element above the current threshold {threshold:e} A"
    )]
    UndefinedNf { threshold: f64 },

    #[error("calibration target NF {target} unreachable; achievable range [{low}, {high}]")]
    Calibration { target: f64, low: f64, high: f64 },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Training { epoch: usize, loss: f64 },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Singular(_) => "singular",
            Error::Convergence { .. } => "convergence",
            Error::UndefinedNf { .. } => "undefined-nf",
            Error::Calibration { .. } => "calibration",
            Error::Training { .. } => "training",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
