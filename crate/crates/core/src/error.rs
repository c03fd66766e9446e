use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed dataset header: {field}")]
    MalformedHeader { field: String },

    #[error("payload size mismatch in {section}: expected {expected} bytes, found {actual}")]
    SizeMismatch { section: &'static str, expected: usize, actual: usize },

    #[error("non-finite feature value in row {row}")]
    NonFiniteFeature { row: usize },

    #[error("label {label} in row {row} is out of range for {classes} classes")]
    InvalidLabel { row: usize, label: u32, classes: usize },

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("zero vector in row {row}")]
    ZeroVector { row: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("operation requires ground-truth labels")]
    MissingTrueLabels,

    #[error("invalid class mapping: class {class} maps to itself")]
    InvalidMapping { class: usize },

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("out-of-distribution pool too small: need {needed}, have {available}")]
    InsufficientOodPool { needed: usize, available: usize },

    #[error("scores admit no valid two-group split")]
    DegenerateScores,

    #[error("neighbourhood pool is empty or too small")]
    EmptyPool,

    #[error("neighbourhood is empty")]
    EmptyNeighborhood,

    #[error("insufficient samples: need at least {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("vector is not unit norm (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("subset is empty")]
    EmptySubset,

    #[error("{name} = {value} is outside [0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },

    #[error("length mismatch: expected {expected}, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("losses have zero variance")]
    DegenerateLosses,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("clean set is empty")]
    EmptyCleanSet,

    #[error("loss is not finite")]
    NonFiniteLoss,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}
