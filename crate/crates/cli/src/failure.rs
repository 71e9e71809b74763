use std::fmt;
use std::process::ExitCode;

use fqpe_core::Error;

/// Stable process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    CheckFailed = 1,
    Input = 2,
    Weights = 3,
    Conflict = 4,
    Numeric = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

impl Failure {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }

    /// Any failure while reading or validating a weights file.
    pub fn weights(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => e.into(),
            other => Self::new(Code::Weights, other.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) => Code::Numeric,
            Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::Manifest(_)
            | Error::Truncated { .. }
            | Error::IncompatibleWeights(_) => Code::Weights,
            _ => Code::Input,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(Code::Input, e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
