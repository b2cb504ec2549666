use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] edgecache_core::Error),

    #[error(transparent)]
    Sac(#[from] edgecache_sac::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
