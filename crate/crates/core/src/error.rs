use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("could not draw a connected graph with N={n_nodes}, E={n_edges} after {attempts} attempts")]
    GraphGenerationFailed {
        n_nodes: usize,
        n_edges: usize,
        attempts: usize,
    },

    #[error("symmetric eigensolver did not converge ({0})")]
    EigenFailed(&'static str),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("singular problem: {0}")]
    Singular(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json: {0}")]
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
}
