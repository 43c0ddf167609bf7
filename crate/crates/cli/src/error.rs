use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nar_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite {0}: existing contents differ (pass --force)")]
    RefusesOverwrite(String),
    #[error("runs are not comparable: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for data problems,
    /// 4 for training divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use nar_core::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigMismatch(_) => 2,
            CliError::RefusesOverwrite(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::UnknownAlgorithm(_) | E::InvalidSize { .. } => 2,
                E::DatasetNotFound(_) | E::SchemaMismatch(_) | E::Format(_) | E::MissingTelemetry(_) | E::EmptyEvaluation(_) => 3,
                E::TrainingDiverged { .. } | E::NumericalError(_) => 4,
                _ => 1,
            },
            CliError::Io(_) => 1,
        }
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
