//! System model and decision machinery for a single-user, single-server
//! mobile-edge network that jointly decides how many cores to compute with,
//! which task input to push ahead of demand, and what to keep in the device
//! cache.
//!
//! The crate is organised bottom-up:
//!
//! * [`config`]: task parameters and the network configuration.
//! * [`state`]: cache/system state, system actions and cost breakdowns.
//! * [`env`]: the exact cost and constraint arithmetic and the one-slot
//!   transition.
//! * [`request`]: the first-order Markov request process.
//! * [`codec`]: continuous encodings for learning agents plus the
//!   quantisation and rule-based correction that turn a raw continuous
//!   action into a valid system action.
//! * [`baselines`]: recency/frequency heuristics and action masks.
//! * [`oracle`]: exhaustive value iteration for small instances.

pub mod baselines;
pub mod codec;
pub mod config;
pub mod env;
pub mod error;
pub mod oracle;
pub mod request;
pub mod state;

pub use baselines::{ActionMask, RecencyFrequencyBook};
pub use codec::{EncodedState, RawAction};
pub use config::{SystemConfig, TaskSpec};
pub use env::{Environment, RolloutSummary, StepOutcome};
pub use error::{Error, Result};
pub use request::TransitionMatrix;
pub use state::{CacheState, CostBreakdown, SystemAction, SystemState};
