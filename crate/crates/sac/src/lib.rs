//! Soft actor-critic for the edge caching and computing problem.
//!
//! Networks are small dense MLPs with hand-written backward passes over flat
//! parameter vectors ([`nn`]). The policy is a tanh-squashed diagonal
//! Gaussian ([`policy`]). [`losses`] holds the value, twin soft-Q, policy and
//! temperature objectives; [`agent`] combines them into one update step and
//! [`trainer`] drives an environment through quantisation and correction.

pub mod agent;
pub mod buffer;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod trainer;

pub use agent::{SacAgent, SacConfig, UpdateStats};
pub use buffer::ReplayBuffer;
pub use error::{Error, Result};
pub use losses::Batch;
pub use nn::{Activation, Mlp, MlpSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{LearningCurve, Schedule, Trainer};
