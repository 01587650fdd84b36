use std::fmt;

/// Failures that end the process, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags, files or formats: exit 2.
    Input(String),
    /// Non-finite values inside the network: exit 3.
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<dualformer::Error> for CliError {
    fn from(e: dualformer::Error) -> Self {
        match e {
            dualformer::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_error_kind() {
        assert_eq!(CliError::from(dualformer::Error::Numeric("x".into())).code(), 3);
        assert_eq!(CliError::from(dualformer::Error::Config("x".into())).code(), 2);
        assert_eq!(CliError::from(dualformer::Error::Format("x".into())).code(), 2);
        assert_eq!(CliError::from(dualformer::Error::Shape("x".into())).code(), 2);
    }
}
