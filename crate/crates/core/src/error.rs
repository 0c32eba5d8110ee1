use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("sequence of {len} tokens exceeds the encoder maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("silver evidence store: {0}")]
    Store(String),
    #[error("document `{0}` is missing from the silver evidence store")]
    StoreCoverage(String),
    #[error("consistency: {0}")]
    Consistency(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
