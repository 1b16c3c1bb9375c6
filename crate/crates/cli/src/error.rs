use selex::SelexError;

/// Errors surfaced by the command line, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config or input files. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Failures while running a valid request. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<SelexError> for CliError {
    fn from(e: SelexError) -> Self {
        match e {
            SelexError::Diverged { .. } => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}
