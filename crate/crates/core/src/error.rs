use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("empty dataset requested")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-numeric feature in column `{column}` at row {row}: `{value}`")]
    NonNumericFeature {
        column: String,
        row: usize,
        value: String,
    },

    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("unknown task kind `{0}`")]
    UnknownTask(String),

    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("expected {expected} labels or instances, got {got}")]
    GroupSize { expected: usize, got: usize },

    #[error("aggregate label does not match the task: {0}")]
    AggregateMismatch(String),

    #[error("enumeration too large: {count} items exceeds bound {bound}")]
    EnumerationBound { count: u128, bound: u128 },

    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("activation cache is stale (cached at version {cached}, model at {current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("omega is not a distribution over S(z): {0}")]
    InvalidOmega(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("every group in epoch {epoch} was degenerate (p(z|x) at floor)")]
    AllDegenerate { epoch: usize },

    #[error("confusion matrix must be square with at most 64 classes, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("unsupported checkpoint schema version {0}")]
    SchemaVersion(u32),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
