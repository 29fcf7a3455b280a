use thiserror::Error;

/// Failure classes with distinct exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, flags, or unwritable outputs.
    #[error("configuration error: {0}")]
    Config(String),
    /// The integrator or a linear solve broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Everything ran but at least one requested check did not pass.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<nilflow::Error> for CliError {
    fn from(e: nilflow::Error) -> Self {
        use nilflow::Error as E;
        let msg = e.to_string();
        match e {
            E::StepSizeUnderflow { .. }
            | E::SingularMatrix { .. }
            | E::LossOfPositivity { .. }
            | E::TooFewSamples { .. } => CliError::Numerical(msg),
            E::NotConverged(_) => CliError::CheckFailed(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
