use std::fmt;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Usage = 1,
    Data = 2,
    Internal = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Data,
            message: message.into(),
        }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self {
            code: ExitCode::Internal,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<arglink::Error> for CliError {
    fn from(e: arglink::Error) -> Self {
        use arglink::Error as E;
        match e {
            E::Config(_) => CliError::usage(e.to_string()),
            E::NonFinite(_) | E::Template(_) => CliError::internal(e),
            _ => CliError::data(e.to_string()),
        }
    }
}
