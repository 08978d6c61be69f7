use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid answer {0:?}: empty after normalization")]
    InvalidAnswer(String),

    #[error("concept parts must be non-empty")]
    InvalidConceptPart,

    #[error("malformed concept key {0:?}")]
    MalformedConceptKey(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("join failure: {dropped} of {total} questions have no annotation")]
    Join { dropped: usize, total: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("split ratios must be positive and sum to 1, got ({0}, {1}, {2})")]
    InvalidRatios(f64, f64, f64),

    #[error("dataset too small to partition: {0} samples (need at least 3)")]
    TooFewSamples(usize),

    #[error("sample {0:?} has no concept vector")]
    MissingConcepts(String),

    #[error("group {0:?} is not imbalanced")]
    NotImbalanced(String),

    #[error("insufficient samples: need {needed} from a pool of {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("concept key {0:?} absent from the training split")]
    UnknownKey(String),

    #[error("imbalance degree undefined: no groups")]
    UndefinedDegree,

    #[error("empty split")]
    EmptySplit,

    #[error("split {0} unavailable")]
    MissingSplit(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stage {stage} failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
