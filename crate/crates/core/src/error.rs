use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class mapping: {0}")]
    InvalidMapping(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("silhouette score undefined: {0}")]
    UndefinedScore(String),

    #[error("need at least 2 clusters to derive labels, got {0}")]
    InsufficientClusters(usize),

    #[error("{} pixel(s) have no science values (first indices: {:?})", .0.len(), &.0[..(.0.len().min(10))])]
    MissingScience(Vec<usize>),

    #[error("{} pixel(s) have no label (first indices: {:?})", .0.len(), &.0[..(.0.len().min(10))])]
    MissingLabel(Vec<usize>),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid split plan: {0}")]
    InvalidPlan(String),

    #[error("infeasible folds: {images} image(s) cannot fill {folds} folds")]
    InfeasibleFolds { images: usize, folds: usize },

    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("band order mismatch: model expects {expected:?}, data has {found:?}")]
    BandOrder { expected: Vec<String>, found: Vec<String> },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{path}: schema error: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("config error at {pointer}: {msg}")]
    ConfigSchema { pointer: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
