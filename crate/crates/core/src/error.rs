use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the linking toolkit.
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

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("the id \"NIL\" is reserved and cannot name a knowledge-base entry (line {line})")]
    ReservedId { line: usize },

    #[error("invalid entry on line {line}: {message}")]
    InvalidEntry { line: usize, message: String },

    #[error("empty knowledge base")]
    EmptyKnowledgeBase,

    #[error("unknown knowledge-base id {0:?}")]
    UnknownId(String),

    #[error("span {start}..={end} out of bounds for {len} tokens")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },

    #[error("invalid query {query_id}: {message}")]
    InvalidQuery { query_id: String, message: String },

    #[error("extractor failed on query {query_id}: {message}")]
    Extraction { query_id: String, message: String },

    #[error("budget of {max_len} tokens cannot hold the {required}-token marked mention")]
    BudgetTooSmall { max_len: usize, required: usize },

    #[error("cannot encode an empty token sequence")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid k = {k} for {n} entries")]
    InvalidK { k: usize, n: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing event type for argument-aware prompt on query {0}")]
    MissingEventType(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("completion client error: {message}")]
    Client { message: String, retryable: bool },

    #[error("gold entry {gold:?} missing from candidates of query {query_id}")]
    GoldNotInCandidates { query_id: String, gold: String },

    #[error("query {0} has no matching gold record")]
    UnmatchedQuery(String),

    #[error("recall depth {k} exceeds retrieved depth {depth} for query {query_id}")]
    RecallDepth { k: usize, depth: usize, query_id: String },

    #[error("dataset fingerprint mismatch: {0} vs {1}")]
    FingerprintMismatch(String, String),

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

    /// Whether retrying the failed call may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Client { retryable: true, .. })
    }
}
