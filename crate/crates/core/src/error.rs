use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch for feature `{feature}` of image `{image}`: expected {expected}, got {actual}{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    DimensionMismatch {
        image: String,
        feature: String,
        expected: usize,
        actual: usize,
        row: Option<usize>,
    },

    #[error("image `{image}` has no feature `{feature}`")]
    MissingFeature { image: String, feature: String },

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("unknown corpus `{0}`")]
    UnknownCorpus(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("malformed record at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("training data has a single class")]
    SingleClass,

    #[error("non-finite feature value in row {0}")]
    NonFinite(usize),

    #[error("not enough rows: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear system is singular")]
    Singular,

    #[error("kernel matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("tensor weights are all zero")]
    ZeroWeights,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("round mismatch: expected round {expected}, got {got}")]
    RoundMismatch { expected: usize, got: usize },

    #[error("image `{0}` was not shown in the current collage")]
    NotShown(String),

    #[error("replay diverged at round {0}")]
    ReplayDiverged(usize),

    #[error("session is finished")]
    SessionFinished,

    #[error("empty simulation pool bin `{0}`")]
    EmptyBin(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
