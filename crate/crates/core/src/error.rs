use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed xml near item {item}: {message}")]
    Xml { item: String, message: String },

    #[error("item {item}: missing or invalid field `{field}`")]
    Field { item: String, field: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid utf-8 in {source_name} at byte {offset}")]
    Utf8 { source_name: String, offset: u64 },

    #[error("backend {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(
        "annotation misalignment at token {index}: segment has {segment_tokens} tokens, annotations have {annotation_tokens}"
    )]
    Alignment {
        index: usize,
        segment_tokens: usize,
        annotation_tokens: usize,
    },

    #[error("generation failed after {attempts} attempts (last candidate: {last_candidate:?})")]
    GenerationFailure {
        attempts: usize,
        last_candidate: String,
    },

    #[error("search refused: {0}")]
    Refused(String),

    #[error("validator: {0}")]
    Validator(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
