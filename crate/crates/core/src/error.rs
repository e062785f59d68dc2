use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unparseable cell at row {row}, column {col} ({column}): {value:?}")]
    UnparseableCell {
        row: usize,
        col: usize,
        column: String,
        value: String,
    },

    #[error("label column {0:?} absent")]
    MissingLabelColumn(String),

    #[error("single-class labels")]
    SingleClassLabels,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("layer {0} has zero size")]
    ZeroLayerSize(usize),

    #[error("batch-statistics normalization needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("zero variance in batch-statistics normalization (layer {layer}, neuron {neuron})")]
    ZeroVariance { layer: usize, neuron: usize },

    #[error("bce loss requires labels")]
    MissingLabels,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no legal mutation: candidate set has a single size")]
    NoLegalMutation,

    #[error("search space of {size} architectures exceeds the enumeration limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    #[error("unknown architecture {key}; nearest keys: {}", nearest.join(", "))]
    UnknownArch { key: String, nearest: Vec<String> },

    #[error("epoch index {index} out of range (record has {len} epochs)")]
    EpochOutOfRange { index: usize, len: usize },

    #[error("constant input")]
    ConstantInput,

    #[error("budget below one proxy evaluation")]
    BudgetTooSmall,

    #[error("saliency identity violated at layer {layer}, neuron {neuron}: {detail}")]
    IdentityViolation {
        layer: usize,
        neuron: usize,
        detail: String,
    },

    #[error("bench file: {0}")]
    BenchFormat(String),

    #[error("training failed on every probe architecture")]
    ProfileFailed,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
