use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no documents")]
    NoDocuments,

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("missing label for document {0:?}")]
    MissingLabel(String),

    #[error("label for unknown document {0:?}")]
    OrphanLabel(String),

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(i64),

    #[error("invalid fold plan: {0}")]
    Folds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dictionary: {0}")]
    Dictionary(String),

    #[error("single-class input: both labels must be present")]
    SingleClass,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: not found; run `{stage}` first")]
    MissingStageOutput { path: PathBuf, stage: &'static str },

    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the invocation rather than the data it points at.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::MissingStageOutput { .. }
        )
    }
}
