use std::path::PathBuf;

use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed LLM response: expected {expected} phrases separated by '#', found {found} in {raw:?}")]
    MalformedResponse {
        raw: String,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("insufficient negatives for {category:?}: need {needed}, only {available} available")]
    InsufficientNegatives {
        category: String,
        needed: usize,
        available: usize,
    },

    #[error("attribute vocabulary of {vocabulary} phrases cannot give {categories} categories distinct sets of {per_category}")]
    VocabularyTooSmall {
        vocabulary: usize,
        categories: usize,
        per_category: usize,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("no concept set for categories: {}", .0.join(", "))]
    MissingConcepts(Vec<String>),

    #[error("expected {expected} answers, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("attribute statistics need concept verdicts (m >= 1), found baseline verdicts")]
    BaselineVerdicts,

    #[error("category sets differ; only in first: [{}]; only in second: [{}]", .only_first.join(", "), .only_second.join(", "))]
    CategoryMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },

    #[error("unsupported schema version {found:?} in {what} (supported major: {supported})")]
    SchemaVersion {
        what: String,
        found: String,
        supported: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
