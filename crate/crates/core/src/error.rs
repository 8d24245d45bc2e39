use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Input does not match the configured schema (unknown drug, missing column).
    #[error("schema error: {0}")]
    Schema(String),

    /// Configuration failed validation. Each entry names one offending field.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// Not enough data for the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An iterative fit failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Required input files are missing.
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingInputs(Vec<PathBuf>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CSV failures: i/o problems stay runtime errors, malformed content is a parse error.
    pub(crate) fn csv(path: impl Into<PathBuf>, line: usize, e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return Error::io(path, io);
            }
            unreachable!("is_io_error checked the kind");
        }
        Error::parse(path, line, e.to_string())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::Config(_)
                | Error::MissingInputs(_)
                | Error::Domain(_)
        )
    }
}
