use thiserror::Error;

/// Errors raised anywhere in the trace, model, objective and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("invalid size n={n} for {algorithm}: minimum is {min}")]
    InvalidSize { algorithm: String, n: usize, min: usize },
    #[error("trace for {algorithm} exceeded {bound} hint steps")]
    TraceOverflow { algorithm: String, bound: usize },
    #[error("invalid hint state: {0}")]
    InvalidHintState(String),
    #[error("brute-force oracle limited to n <= {max}, got n={n}")]
    OracleSizeExceeded { n: usize, max: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("training diverged at step {step}: loss={loss}")]
    TrainingDiverged { step: usize, loss: f64 },
    #[error("dataset not found: {0}")]
    DatasetNotFound(String),
    #[error("missing telemetry: {0}")]
    MissingTelemetry(String),
    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
