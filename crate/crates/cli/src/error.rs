use thiserror::Error;

/// CLI failure classes; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

/// Wraps a core error with the step that raised it.
pub fn numerical(context: &str) -> impl Fn(fdmr_core::Error) -> CliError + '_ {
    move |e| CliError::Numerical(format!("{context}: {e}"))
}
