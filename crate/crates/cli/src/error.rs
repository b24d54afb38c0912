use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fernmatch_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 usage, 2 data or format, 3 internal.
    pub fn exit_code(&self) -> i32 {
        use fernmatch_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                E::Io(_)
                | E::Format(_)
                | E::Unsupported(_)
                | E::PayloadLength { .. }
                | E::InsufficientKeypoints { .. }
                | E::Configuration(_)
                | E::Domain(_)
                | E::TableSize { .. }
                | E::Capacity { .. } => 2,
                E::Border { .. } | E::ClassIndex { .. } | E::Degenerate => 3,
            },
            CliError::Json(_) => 3,
        }
    }
}
