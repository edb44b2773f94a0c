use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("relation label `{0}` is not in the schema")]
    UnknownRelation(String),
    #[error("sentence `{sentence_id}`: entity surface `{surface}` not found")]
    EntityNotFound { sentence_id: String, surface: String },
    #[error("invalid span: {0}")]
    InvalidSpan(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("not trained: {0}")]
    Untrained(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("setting mismatch: checkpoint trained on {checkpoint}, config asks for {requested}")]
    SettingMismatch { checkpoint: String, requested: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed_line",
            Error::UnknownRelation(_) => "unknown_relation",
            Error::EntityNotFound { .. } => "entity_not_found",
            Error::InvalidSpan(_) => "invalid_span",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Registry(_) => "registry",
            Error::Untrained(_) => "untrained",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::SettingMismatch { .. } => "setting_mismatch",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
