use std::fmt;

/// Validation errors exit with 1, runtime failures with 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Validation(msg.into()))
}

/// Maps a library error to a validation error (bad input data).
pub trait ValidationContext<T> {
    fn invalid_input(self, what: &str) -> Result<T>;
}

impl<T, E: fmt::Display> ValidationContext<T> for std::result::Result<T, E> {
    fn invalid_input(self, what: &str) -> Result<T> {
        self.map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }
}

/// Maps a library error to a runtime failure.
pub trait RuntimeContext<T> {
    fn runtime(self, what: &str) -> Result<T>;
}

impl<T, E: fmt::Display> RuntimeContext<T> for std::result::Result<T, E> {
    fn runtime(self, what: &str) -> Result<T> {
        self.map_err(|e| CliError::Runtime(anyhow::anyhow!("{what}: {e}")))
    }
}
