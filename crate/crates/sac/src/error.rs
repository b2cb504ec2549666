use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] edgecache_core::Error),

    /// A loss or parameter went non-finite.
    #[error("training diverged at update {update}: {what}")]
    Diverged { update: u64, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
