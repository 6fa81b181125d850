use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum NiaqueError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("quantile level {0} is outside (0, 1)")]
    QuantileDomain(f64),

    #[error("feature id {id} is outside the vocabulary (capacity {capacity})")]
    UnknownFeature { id: usize, capacity: usize },

    #[error("feature id {0} appears more than once in a row")]
    DuplicateFeature(usize),

    #[error("invalid feature row: {0}")]
    InvalidRow(String),

    #[error("registry holds {needed} feature ids but the embedding table has {capacity} rows; resize the vocabulary first")]
    ResizeRequired { needed: usize, capacity: usize },

    #[error("logarithmic metric undefined for value {0} (must be > -1)")]
    LogDomain(f64),

    #[error("dataset `{name}`: {reason}")]
    Dataset { name: String, reason: String },

    #[error("duplicate registry entry ({dataset}, {column})")]
    DuplicateRegistration { dataset: String, column: String },

    #[error("degenerate model: zero confidence-interval width for feature ids {0:?}")]
    DegenerateModel(Vec<usize>),

    #[error("feature id {0} does not occur in the evaluated rows")]
    FeatureAbsent(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("container format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NiaqueError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        NiaqueError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Wraps an I/O failure with the path (or stream name) it concerns.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        NiaqueError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, NiaqueError>;
