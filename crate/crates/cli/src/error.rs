use std::fmt;

use ptl_core::io::AdapterError;
use ptl_core::PtlError;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Adapter = 3,
}

/// A failed command: the diagnostic plus the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            exit: Exit::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl From<PtlError> for CliError {
    fn from(e: PtlError) -> Self {
        let exit = match e.root() {
            PtlError::Adapter(_) => Exit::Adapter,
            PtlError::InvalidConfig(_) => Exit::Usage,
            _ => Exit::Data,
        };
        Self {
            exit,
            error: e.into(),
        }
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        Self {
            exit: Exit::Adapter,
            error: e.into(),
        }
    }
}

pub trait ResultExt<T> {
    /// Classify the error as bad input data.
    fn data(self) -> Result<T, CliError>;
    /// Classify the error as a usage mistake.
    fn usage(self) -> Result<T, CliError>;
    fn data_ctx(self, context: impl fmt::Display) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn data(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            exit: Exit::Data,
            error: e.into(),
        })
    }

    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            exit: Exit::Usage,
            error: e.into(),
        })
    }

    fn data_ctx(self, context: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            exit: Exit::Data,
            error: e.into().context(context.to_string()),
        })
    }
}
