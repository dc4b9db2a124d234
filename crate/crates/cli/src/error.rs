use std::path::PathBuf;

/// Failures of a command, split by exit code: usage and input problems exit
/// with 1, failed certificates with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] solenoid_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use solenoid_core::Error as E;
        match self {
            CliError::Core(
                E::Certificate(_)
                | E::Membership(_)
                | E::Schedule(_)
                | E::OutsideInnerBound(_)
                | E::CoverageFloor { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
