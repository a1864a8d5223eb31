use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// The CLI maps these onto exit codes: everything that traces back to user
/// input (config, data files, domain violations) exits with 2, unexpected
/// internal failures with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid hour {0}; expected 0..=23")]
    InvalidHour(u32),

    #[error("unknown builtin tariff '{0}'; available: table1, tata")]
    UnknownTariff(String),

    #[error("invalid tariff schedule: {0}")]
    InvalidTariff(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{row}: {message}")]
    InvalidData {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("load profile error: {0}")]
    InvalidProfile(String),

    #[error("{0}")]
    UsageError(String),

    #[error("environment misuse: {0}")]
    EnvMisuse(String),

    #[error("observation length {got} does not match network input {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("oracle state space too large: {states} states exceeds budget {budget}; use a coarser quantum")]
    OracleBudget { states: u64, budget: u64 },

    #[error("cannot compute savings: baseline cost {0} is not positive")]
    DegenerateBaseline(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Attach a path to a raw IO error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than toolkit bugs.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}
