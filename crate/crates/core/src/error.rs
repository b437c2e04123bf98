use thiserror::Error;

/// Errors raised by the meta-learning engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, lengths or handles do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    /// A value lies outside the domain of an operation (e.g. log of a non-positive number).
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller-side precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// A binary file did not parse.
    #[error("format error: {0}")]
    Format(String),
    /// Two inputs that must agree do not.
    #[error("consistency error: {0}")]
    Consistency(String),
    /// A task sampler could not produce an episode.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// The input makes a quantity undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Meta-training hit a non-finite or exploding loss.
    #[error("training diverged at epoch {epoch}, task {task}: {reason}")]
    Training {
        epoch: usize,
        task: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn structural<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Structural(msg.into()))
}
