use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no title found in header or body")]
    MissingTitle,

    #[error("cannot parse date {0:?} (expected YYYY-MM-DD or DD Month YYYY)")]
    BadDate(String),

    #[error("unknown exploit type {0:?}")]
    UnknownExploitType(String),

    #[error("CVE feed contains no valid records ({skipped} skipped)")]
    EmptyFeed { skipped: usize },

    #[error("malformed CPE URI {0:?}")]
    MalformedCpe(String),

    #[error("length mismatch: {left} tokens vs {right} tags")]
    LengthMismatch { left: usize, right: usize },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("stub fixture does not match post {edb_id}: {detail}")]
    StubMismatch { edb_id: u64, detail: String },

    #[error("predictions and gold answers are not aligned: {0}")]
    AlignmentError(String),

    #[error("no aspect available to compose a description")]
    EmptyAspects,

    #[error("no composed description has a reference CVE")]
    NoPairs,

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("sample of {requested} requested from {available} items")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("post {edb_id}: {source}")]
    Post {
        edb_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_post(self, edb_id: u64) -> Self {
        match self {
            e @ Error::Post { .. } => e,
            e => Error::Post {
                edb_id,
                source: Box::new(e),
            },
        }
    }
}

impl Error {
    /// Process exit status for the command-line tool: 2 for bad input, 3
    /// for a backend that failed with fallback disabled, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Post { source, .. } => source.exit_code(),
            Error::MissingTitle
            | Error::BadDate(_)
            | Error::UnknownExploitType(_)
            | Error::EmptyFeed { .. }
            | Error::MalformedCpe(_)
            | Error::BadParameter(_)
            | Error::SampleTooLarge { .. }
            | Error::StubMismatch { .. }
            | Error::Validation(_)
            | Error::File { .. } => 2,
            Error::BackendUnavailable(_) | Error::Protocol(_) => 3,
            _ => 1,
        }
    }
}
