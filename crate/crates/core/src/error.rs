use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("page {doc_id}/{page_id} has no line left after zone filtering")]
    EmptyPage { doc_id: String, page_id: String },

    #[error("edition passage {work_id}/{passage_id} is empty")]
    EmptyPassage { work_id: String, passage_id: String },

    #[error("span {start}..{end} is outside text of length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },

    #[error("exhaustive alignment of {cells} cells exceeds the cap of {cap}")]
    TooLarge { cells: usize, cap: usize },

    #[error("aligned region of {bytes} bytes is below the {min_bytes}-byte minimum")]
    Unchunkable { bytes: usize, min_bytes: usize },

    #[error("rule conflict between table lines {first} and {second}: {reason}")]
    RuleConflict {
        first: usize,
        second: usize,
        reason: String,
    },

    #[error("invalid rule on line {line}: {reason}")]
    InvalidRule { line: usize, reason: String },

    #[error("invalid marker table line {line}: {reason}")]
    InvalidMarkerTable { line: usize, reason: String },

    #[error("external normalizer failed on input {id}: {reason}")]
    EndpointFailure { id: String, reason: String },

    #[error("external normalizer timed out on input {id} after {millis} ms")]
    Timeout { id: String, millis: u64 },

    #[error("reference text is empty")]
    EmptyReference,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("review store is corrupt ({}:{line}): {reason}", path.display())]
    StoreCorruption {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown pair id {0}")]
    UnknownPair(String),

    #[error("invalid decision: {0}")]
    InvalidDecision(String),

    #[error("stale status for pair {id}: expected {expected}, found {found}")]
    StaleStatus {
        id: String,
        expected: String,
        found: String,
    },

    #[error("malformed record at {}:{line}: {reason}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid index file: {0}")]
    IndexFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
