use thiserror::Error;

/// Error type shared across the crate.
///
/// The CLI maps variants onto process exit codes: validation/dimension
/// errors -> 1, numerical failures -> 2, I/O -> 3.
#[derive(Debug, Error)]
pub enum MladError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The GMM split produced an empty low-confusion set; the caller should
    /// fall back to the N/2 lowest-entropy samples.
    #[error("low-confusion set is empty; fall back to the lowest-entropy half")]
    EmptyLowConfusionSet,
    #[error("checkpoint stage chain broken: {0}")]
    StageChain(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

impl MladError {
    pub fn dim(msg: impl Into<String>) -> Self {
        MladError::Dim(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        MladError::Validation(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        MladError::Numerical(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            MladError::Numerical(_) => 2,
            MladError::Io(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, MladError>;
