//! Experiment harness: TOML configuration, replica orchestration over
//! algorithms, sweep points and seeds, metrics CSV, and across-seed
//! summaries with ordering checks.

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod summary;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use experiment::{run_experiment, Algorithm, ExperimentSpec, Sweep, SweepVariable};
pub use metrics::{MetricsRow, Status};
pub use summary::{summarize, Stat, Summary};
