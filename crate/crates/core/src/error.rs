use std::path::PathBuf;

use thiserror::Error;

use crate::pruner::CandidateSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Parse(#[source] serde_json::Error),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("tool '{tool_id}' references unknown server '{server_id}'")]
    DanglingReference { tool_id: String, server_id: String },

    #[error("zero-length embedding for {record}")]
    ZeroVector { record: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("catalog must be normalized before {0}")]
    NotNormalized(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("completion is missing the {0} label")]
    MissingLabel(&'static str),

    /// The LLM call failed; the pruned candidates are kept so callers can
    /// fall back or report them.
    #[error("LLM request failed: {source}")]
    Llm {
        #[source]
        source: ClientError,
        candidates: Box<CandidateSet>,
    },

    #[error("embedding request failed: {0}")]
    Embedding(#[source] ClientError),

    #[error("failed to write report: {0}")]
    Report(String),
}

/// Failure talking to an LLM or embedding provider.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("unexpected response: {0}")]
    Response(String),

    #[error("no embedding available for text {0:?}")]
    UnknownText(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
