use std::path::PathBuf;

use dggn_tape::TapeError;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum DggnError {
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),
    /// The operation needs state that does not exist yet (e.g. a frozen snapshot).
    #[error("state error: {0}")]
    State(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// A checked invariant failed.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

pub type Result<T, E = DggnError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DggnError {
    let path = path.into();
    move |source| DggnError::Io { path, source }
}
