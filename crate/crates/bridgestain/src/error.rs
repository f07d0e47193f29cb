//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// The CLI maps these onto process exit codes: configuration and usage
/// problems (`InvalidInput`, `InvalidConfig`, `InvalidStep`, `EmptyResult`,
/// `IncompatibleCheckpoint`) exit with 2, runtime and data problems
/// (`Malformed`, `Io`) exit with 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or argument violated an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A timestep outside the valid range of the schedule.
    #[error("invalid step t={t}, valid range is {lo}..={hi}")]
    InvalidStep { t: usize, lo: usize, hi: usize },

    /// An operation that must produce at least one element produced none.
    #[error("empty result: {0}")]
    EmptyResult(String),

    /// A checkpoint does not match the requested configuration.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    /// A file exists but its contents are not what its format promises.
    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by how the caller invoked the library, as
    /// opposed to failures of the environment or of stored data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidConfig(_)
                | Error::InvalidStep { .. }
                | Error::EmptyResult(_)
                | Error::IncompatibleCheckpoint(_)
        )
    }
}
