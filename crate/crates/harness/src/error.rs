use std::path::Path;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Harness failures, grouped by process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Invariant(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Data(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with `ctx`, keeping the category.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            HarnessError::Config(m) => HarnessError::Config(format!("{ctx}: {m}")),
            HarnessError::Data(m) => HarnessError::Data(format!("{ctx}: {m}")),
            HarnessError::Invariant(m) => HarnessError::Invariant(format!("{ctx}: {m}")),
        }
    }
}

impl From<synthphys_core::Error> for HarnessError {
    fn from(e: synthphys_core::Error) -> Self {
        use synthphys_core::Error as E;
        match e {
            E::InvalidSpec(_)
            | E::InvalidRange { .. }
            | E::OutOfRange(_)
            | E::InvalidRate(_)
            | E::InvalidBand { .. }
            | E::EmptyBand { .. } => HarnessError::Config(e.to_string()),
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

pub trait Context<T> {
    fn context(self, ctx: impl std::fmt::Display) -> Result<T>;
}

impl<T, E: Into<HarnessError>> Context<T> for std::result::Result<T, E> {
    fn context(self, ctx: impl std::fmt::Display) -> Result<T> {
        self.map_err(|e| e.into().context(ctx))
    }
}
