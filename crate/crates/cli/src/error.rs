use thiserror::Error;
use uditqc_model::ModelError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<uditqc_core::Error> for CliError {
    fn from(e: uditqc_core::Error) -> Self {
        use uditqc_core::Error as E;
        match e {
            E::Io(_) | E::Json(_) | E::Parse { .. } => CliError::Io(e.to_string()),
            E::Validation(_) | E::Capacity(_) | E::Spec(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Validation(m) => CliError::Config(m),
            ModelError::Numeric(m) => CliError::Numeric(m),
            ModelError::Tensor(t) => CliError::Numeric(t.to_string()),
            ModelError::Core(c) => c.into(),
            ModelError::Io(_) | ModelError::Json(_) | ModelError::Csv(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub(crate) fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
