use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dpscale_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset unavailable: {0}")]
    DataMissing(String),

    #[error("no feasible setting: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(dpscale_core::Error::Unreachable(_)) => "privacy_target_unreachable",
            Error::Core(dpscale_core::Error::Format { .. } | dpscale_core::Error::Parse { .. }) => "format",
            Error::Core(dpscale_core::Error::InvalidArgument(_)) => "invalid_argument",
            Error::Core(dpscale_core::Error::Io(_)) => "io",
            Error::Core(_) => "engine",
            Error::Config(_) => "config",
            Error::DataMissing(_) => "dataset_missing",
            Error::Infeasible(_) => "infeasible",
            Error::Json(_) => "json",
            Error::Csv(_) | Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
