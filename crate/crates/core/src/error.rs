use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("class id {class_id} out of range (num_classes_max = {max})")]
    ClassOutOfRange { class_id: u32, max: usize },

    #[error("embedding has zero norm and cannot be normalized")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {0} is absent from the pool")]
    ClassAbsent(u32),

    #[error("no negatives available for {0}")]
    NoNegatives(String),

    #[error("estimator for {0} is not initialized")]
    UninitializedEstimator(String),

    #[error("estimator for {key} is not positive ({value})")]
    NonPositiveEstimator { key: String, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at task {task}, step {step}: {reason}")]
    Divergence {
        task: usize,
        step: usize,
        reason: String,
    },

    #[error("invalid task stream: {0}")]
    InvalidStream(String),

    #[error("malformed dataset file: {0}")]
    MalformedFile(String),

    #[error("unsupported dataset file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
