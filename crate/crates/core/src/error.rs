use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("no records")]
    NoRecords,
    #[error("no candidate users with more than {min_ratings} ratings")]
    NoCandidates { min_ratings: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} diverged (non-finite values); try a smaller learning rate")]
    Divergence(String),
    #[error("illegal action {0}: not in the available-action set")]
    IllegalAction(usize),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("input width {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("network architectures differ")]
    ArchitectureMismatch,
    #[error("empty action set")]
    EmptyMask,
    #[error("replay memory is empty")]
    EmptyMemory,
    #[error("differences have zero variance")]
    ZeroVariance,
}

pub type Result<T> = core::result::Result<T, Error>;
