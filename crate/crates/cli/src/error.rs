use diffgame_core::Error;

/// Exit code for bad arguments or configuration (matches clap's).
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running a valid request.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unknown { .. }
            | Error::Config(_)
            | Error::MeshSpec { .. }
            | Error::InvalidMesh(_)
            | Error::MeshOutsideSet { .. }
            | Error::EmptySamples
            | Error::UnsupportedDimension(_)
            | Error::InvalidGrid(_)
            | Error::InvalidPartition(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
