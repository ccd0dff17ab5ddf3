use thiserror::Error;

pub type Result<T> = std::result::Result<T, CramError>;

/// Errors raised anywhere in the cram pipeline.
#[derive(Debug, Error)]
pub enum CramError {
    #[error("invalid batching: {0}")]
    InvalidBatching(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("overlap violation: propensity {propensity} outside [{lower}, {upper}]{}", row_suffix(.row))]
    OverlapViolation {
        propensity: f64,
        lower: f64,
        upper: f64,
        row: Option<usize>,
    },

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("shape error: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {message} (condition estimate {condition:e})")]
    Numerical { message: String, condition: f64 },

    #[error("learner has not been fitted on any data")]
    NotFitted,

    #[error("index {index} out of range {lo}..={hi}")]
    Index { index: usize, lo: usize, hi: usize },

    #[error("learner failed at step {step}: {source}")]
    LearnerStep {
        step: usize,
        #[source]
        source: Box<CramError>,
    },

    #[error("replicate {replicate}, method {method}: {source}")]
    Replicate {
        replicate: usize,
        method: String,
        #[source]
        source: Box<CramError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}
