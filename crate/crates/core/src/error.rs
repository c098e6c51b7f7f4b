use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("index load failed: {0}")]
    IndexFormat(String),

    #[error("mention span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("question has {len} tokens, limit is {limit}")]
    QuestionTooLong { len: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
