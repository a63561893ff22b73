use std::io;

/// Errors raised anywhere in the retrieval engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate passage id {0}")]
    DuplicatePassage(String),

    #[error("unknown passage id {0}")]
    UnknownPassage(String),

    #[error("invalid question type {0:?}")]
    InvalidQuestionType(String),

    #[error("question {0}: gold passages must be distinct")]
    SameGolds(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("passage {0} has no tokens")]
    NoTokens(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("truncated payload: {0}")]
    Truncated(&'static str),

    #[error("invalid dimension {0}")]
    InvalidDimension(usize),

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("non-finite value in row {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("no score for question {question} and passage {passage}")]
    MissingScore { question: String, passage: String },

    #[error("duplicate positive passage {0} in batch")]
    DuplicatePositive(String),

    #[error("hard negative {0} equals its own positive")]
    NegativeIsPositive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
