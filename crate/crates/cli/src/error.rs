use lcx_core::eval::EvalError;
use lcx_core::mcmc::McmcError;
use lcx_core::normalize::NormalizeError;
use lcx_core::pfn::PfnError;
use lcx_core::prior::PriorError;
use thiserror::Error;

/// Failure categories with their process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PfnError> for CliError {
    fn from(e: PfnError) -> Self {
        match e {
            PfnError::Io(_) | PfnError::Format(_) => CliError::Io(e.to_string()),
            PfnError::InvalidConfig(_) | PfnError::InvalidGrid(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<McmcError> for CliError {
    fn from(e: McmcError) -> Self {
        match e {
            McmcError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<PriorError> for CliError {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<NormalizeError> for CliError {
    fn from(e: NormalizeError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Pfn(inner) => inner.into(),
            EvalError::Mcmc(inner) => inner.into(),
            EvalError::Normalize(inner) => inner.into(),
            EvalError::Io(inner) => inner.into(),
            EvalError::InvalidCurve(_) => CliError::Io(e.to_string()),
            EvalError::InvalidCutoff(_) => CliError::Config(e.to_string()),
            EvalError::MissingRecord { .. } | EvalError::InvalidRecord(_) => CliError::Numeric(e.to_string()),
        }
    }
}
