use std::fmt;

use avwnet::Error;

/// Process exit status; the numeric values are a stable scripting contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            status: Status::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            status: Status::Data,
            message: message.into(),
        }
    }

    pub fn from_core(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => Status::Usage,
            Error::Numeric(_) | Error::Backward(_) => Status::Numeric,
            _ => Status::Data,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::from_core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_stable_codes() {
        assert_eq!(CliError::from(Error::Numeric("nan".into())).status as i32, 3);
        assert_eq!(CliError::from(Error::Dataset("x".into())).status as i32, 2);
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).status as i32, 1);
        assert_eq!(CliError::from(Error::Checkpoint("x".into())).status as i32, 2);
    }
}
