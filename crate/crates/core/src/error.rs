use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("the goblet never rests at home")]
    GobletAtHome,
    #[error("no advice for a terminal state")]
    TerminalState,
    #[error("state {0} is not part of the enumerated state space")]
    UnknownState(String),
    #[error("empty hypothesis list")]
    NoHypotheses,
    #[error("gesture window must hold {expected} labels, got {got}")]
    WindowLength { expected: usize, got: usize },
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
