use thiserror::Error;

/// Errors raised while parsing IDX image/label files.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic number in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("truncated {file} file: expected {expected} bytes, found {found}")]
    Truncated {
        file: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: u8, classes: usize },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("invalid label marginal: {0}")]
    InvalidMarginal(String),
    #[error("unsupported class {class}: zero training mass but positive target mass")]
    UnsupportedClass { class: usize },
    #[error("invalid ratio vector: {0}")]
    InvalidRatio(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid probability matrix: {0}")]
    InvalidProbabilities(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("diverged: non-finite {what} at {stage} {index}")]
    Diverged {
        what: &'static str,
        stage: &'static str,
        index: usize,
    },
    #[error("ill-conditioned confusion matrix (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("malformed predictor record: {0}")]
    MalformedRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
