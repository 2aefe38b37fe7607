use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("cannot dummify: {0}")]
    Dummify(String),

    #[error("missing subrelation result for roles ({0}, {1})")]
    MissingSubrelation(u8, u8),

    #[error("scorer transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("contradictory hard constraints: {}", factors.join(", "))]
    Inconsistent { factors: Vec<String> },

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn lookup(kind: &'static str, id: impl Into<String>) -> Self {
        Error::Lookup {
            kind,
            id: id.into(),
        }
    }
}
