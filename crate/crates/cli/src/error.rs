use thiserror::Error;

/// Failure classes of the runner, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Fit(_) => 3,
        }
    }
}

impl From<igeood::Error> for CliError {
    fn from(e: igeood::Error) -> Self {
        use igeood::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Fit(_) => CliError::Fit(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<igeood::DumpError> for CliError {
    fn from(e: igeood::DumpError) -> Self {
        CliError::Data(format!("[{}] {e}", e.code()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_data(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
