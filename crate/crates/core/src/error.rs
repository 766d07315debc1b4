use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e})")]
    NotConverged { iterations: usize, gap: f64 },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate device id `{0}`")]
    DuplicateDevice(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("schema mismatch: expected {expected}, found {actual}")]
    SchemaMismatch { expected: String, actual: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, stable across releases (the CLI maps them to exit codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    MissingInput,
    SchemaMismatch,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_)
            | Error::SizeMismatch { .. }
            | Error::DuplicateDevice(_)
            | Error::Manifest(_)
            | Error::Parse(_)
            | Error::Json(_) => ErrorKind::InvalidInput,
            Error::MissingFile(_) => ErrorKind::MissingInput,
            Error::SchemaMismatch { .. } => ErrorKind::SchemaMismatch,
            Error::UndefinedMetric(_) | Error::DegenerateLabels(_) | Error::NotConverged { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
