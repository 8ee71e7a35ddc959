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

    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("line {line}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatchAtLine {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate doc_id {doc_id:?}")]
    DuplicateDocId { line: usize, doc_id: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty input")]
    EmptyInput,

    #[error("k = {k} out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },

    #[error("need at least 2 documents, got {0}")]
    TooFewDocuments(usize),

    #[error("{authors} authors cannot host {centroids} distinct centroids")]
    TooFewAuthors { authors: usize, centroids: usize },

    #[error("label {label:?} appears {count} times; every label must appear exactly twice")]
    UnpairedLabel { label: String, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("no vector for document {0:?}")]
    MissingVector(String),

    #[error("no author is eligible for a {0} task")]
    NoEligibleAuthors(&'static str),

    #[error("empty haystack")]
    EmptyHaystack,

    #[error("validation author {0:?} also appears in training")]
    ValidationOverlap(String),

    #[error("reports were computed over different tasks")]
    MismatchedTasks,

    #[error("malformed model checkpoint: {0}")]
    BadCheckpoint(String),
}
