use std::path::PathBuf;

use thiserror::Error;

use crate::model::WindowId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {0}")]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("duplicate window ids: {}", format_ids(.0))]
    DuplicateWindows(Vec<WindowId>),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("latitude {0} unsupported for an equirectangular fence (|lat| must be < 89)")]
    UnsupportedLatitude(f64),

    #[error("no knee: {0}; pass a manual threshold instead")]
    NoKnee(String),

    #[error("quota mismatch between selection states")]
    QuotaMismatch,
}

/// Binary/text decoding failures. Offsets are byte positions for binary
/// formats and 1-based line numbers for text formats.
#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("bad magic at byte 0: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported version {version} at byte {offset}")]
    BadVersion { offset: u64, version: u32 },

    #[error("dim mismatch at byte {offset}: expected {expected}, header says {found}")]
    DimMismatch {
        offset: u64,
        expected: u32,
        found: u32,
    },

    #[error("truncated at byte {offset}: needed {needed} more bytes for {what}")]
    Truncated {
        offset: u64,
        needed: u64,
        what: &'static str,
    },

    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: u64 },

    #[error("duplicate window id {id} at byte {offset}")]
    DuplicateId { offset: u64, id: u64 },

    #[error("trailing bytes at byte {offset}")]
    TrailingBytes { offset: u64 },

    #[error("invalid field at byte {offset}: {message}")]
    InvalidField { offset: u64, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

fn format_ids(ids: &[WindowId]) -> String {
    ids.iter()
        .map(|id| id.0.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::Level {
            level,
            source: Box::new(self),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
