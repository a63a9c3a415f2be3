//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violated a documented invariant.
    #[error("invalid {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// Shapes of two operands do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A value left the range the deterministic accumulator can represent.
    #[error("value {value:e} outside deterministic accumulation range (|v| must be < 2^45)")]
    AccumulatorRange { value: f64 },

    /// Byte arithmetic in a memory estimate overflowed.
    #[error("memory estimate overflow while computing {term}")]
    MemoryOverflow { term: &'static str },

    /// A run would exceed the configured per-worker memory budget.
    #[error(
        "memory budget exceeded: worker needs {required} bytes, budget is {budget} bytes; \
         limiting term is {limiting_term}"
    )]
    BudgetExceeded {
        required: u64,
        budget: u64,
        limiting_term: &'static str,
    },

    /// A worker task failed; the whole run is abandoned.
    #[error("worker {worker} failed: {reason}")]
    WorkerFailure { worker: usize, reason: String },

    #[error("{path}: {reason}")]
    UnsupportedTiff { path: PathBuf, reason: String },

    #[error("{path}: page count mismatch: descriptor implies {expected} pages, file has {found}")]
    PsfPageCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: page {page}: {reason}")]
    PsfPage {
        path: PathBuf,
        page: usize,
        reason: String,
    },

    #[error("{path}: line {line}: {reason}")]
    Config {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: TIFF error: {source}")]
    Tiff {
        path: PathBuf,
        #[source]
        source: tiff::TiffError,
    },

    #[error("{path}: JSON error: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
