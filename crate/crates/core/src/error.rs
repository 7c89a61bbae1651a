use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
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

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("duplicate concept `{0}`")]
    DuplicateConcept(String),

    #[error("unknown semantic group `{group}` for concept `{cui}`")]
    UnknownSemanticGroup { cui: String, group: String },

    #[error("unknown relation label `{0}`")]
    UnknownRelation(String),

    #[error("relation label `NA` is reserved for negatives")]
    ReservedLabel,

    #[error("invalid relation schema: {0}")]
    Schema(String),

    #[error("concept `{0}` is not in the lexicon")]
    MissingConcept(String),

    #[error("hierarchy contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("page `{0}`: no lexicon mention in title")]
    NoHeadMention(String),

    #[error("entity spans overlap: ({0}, {1}) and ({2}, {3})")]
    OverlappingSpans(usize, usize, usize, usize),

    #[error("semantic group `{0}` needs at least 2 concepts for entity replacement")]
    GroupTooSmall(String),

    #[error("vector dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("insufficient negatives: need {needed}, have {available}")]
    InsufficientNegatives { needed: usize, available: usize },

    #[error("embedding row `{token}` has {found} values, expected {expected}")]
    EmbeddingRow {
        token: String,
        expected: usize,
        found: usize,
    },

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("empty input sequence")]
    EmptySequence,

    #[error("empty bag")]
    EmptyBag,

    #[error("gradient trace is stale (trace generation {trace}, params generation {params})")]
    StaleTrace { trace: u64, params: u64 },

    #[error("checkpoint tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("positive bag sets differ between datasets")]
    PositiveSetMismatch,

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("json error: {0}")]
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
}
