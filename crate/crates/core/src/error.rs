use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Backend,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("label index {index} out of range for a {count}-class task")]
    LabelOutOfRange { index: usize, count: usize },

    #[error("sample `{id}` has {found} segment(s), task arity is {expected}")]
    ArityMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid pattern `{template}`: {message}")]
    InvalidPattern { template: String, message: String },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty index")]
    EmptyIndex,

    #[error("index format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("prompt of {len} chars exceeds limit of {max}")]
    PromptTooLong { len: usize, max: usize },

    #[error("degenerate score vector: all probabilities are zero")]
    DegenerateScore,

    #[error("invalid score vector: {0}")]
    InvalidScore(String),

    #[error("fixture miss for prompt sha256 {hash}{}", candidate.as_ref().map(|c| format!(" (candidate `{c}`)")).unwrap_or_default())]
    FixtureMiss {
        hash: String,
        candidate: Option<String>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend `{0}` does not support this operation")]
    Unsupported(String),

    #[error("sample `{0}` has no gold label")]
    MissingGold(String),

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("fixture error: {0}")]
    Fixture(String),

    #[error("input `{id}`: {source}")]
    AtInput {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_input(self, id: impl Into<String>) -> Self {
        Error::AtInput {
            id: id.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::FixtureMiss { .. }
            | Error::Transport(_)
            | Error::Protocol(_)
            | Error::Unsupported(_) => ErrorKind::Backend,
            Error::AtInput { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
