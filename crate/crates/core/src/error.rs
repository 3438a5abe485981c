use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid query: query text must be non-empty")]
    InvalidQuery,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("retries exhausted: retry count would exceed max_retries = {max_retries}")]
    RetriesExhausted { max_retries: u32 },

    #[error("invalid state transition: {0}")]
    InvalidTransition(&'static str),

    #[error("selected document {0:?} is not among the current candidates")]
    SelectionNotInCandidates(String),

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("bias detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("candidate {0:?} has not been annotated with bias scores")]
    NotAnnotated(String),

    #[error("no document has been selected")]
    NoSelection,

    #[error("relative reduction undefined for a zero baseline rate")]
    UndefinedReduction,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown mode {0:?} (expected no-select, zero-shot or few-shot)")]
    UnknownMode(String),

    #[error("embedding provider failed: {0}")]
    Embedding(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
