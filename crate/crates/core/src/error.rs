use thiserror::Error;

use crate::env::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid action: {}", format_violations(.0))]
    InvalidAction(Vec<Violation>),

    /// An internal invariant did not hold. Reaching this is a bug.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("instance too large for exhaustive solution: ~{estimate:.3e} state-action pairs (limit {limit:.3e})")]
    TooLarge { estimate: f64, limit: f64 },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
