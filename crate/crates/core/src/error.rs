use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Simulation,
    Evaluation,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("household generation cannot terminate: {0}")]
    NonTermination(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("malformed input `{path}`: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::InvalidConfig(_) | Error::Toml(_) => ErrorKind::Config,
            Error::NonTermination(_) | Error::Consistency(_) => ErrorKind::Simulation,
            Error::Contract(_) | Error::Evaluation(_) => ErrorKind::Evaluation,
            Error::Format { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorKind::Io,
        }
    }
}
