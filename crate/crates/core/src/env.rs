//! Cost and constraint arithmetic of the system model, and the one-slot
//! state transition.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SystemConfig, TaskSpec};
use crate::error::{Error, Result};
use crate::request::TransitionMatrix;
use crate::state::{CacheState, CostBreakdown, SystemAction, SystemState};

/// `I * w / (tau * f_D)`, the workload expressed in "cores for one slot".
fn core_ratio(task: &TaskSpec, config: &SystemConfig) -> f64 {
    task.workload_cycles() / (config.slot_seconds * config.core_freq)
}

/// Ceiling of `ratio`, and whether `ratio` is (numerically) an integer.
/// Values within a relative 1e-9 of an integer snap to it, so a ratio that
/// should be exactly 1 does not become 2 through rounding noise.
fn snapped_ceil(ratio: f64) -> (u64, bool) {
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        (nearest as u64, true)
    } else {
        (ratio.ceil() as u64, false)
    }
}

/// Smallest core count that finishes the computation of `task` within one
/// slot, `ceil(I * w / (tau * f_D))`.
///
/// Fails when even all cores are too slow.
pub fn min_cores(task: &TaskSpec, config: &SystemConfig) -> Result<u32> {
    let (cores, _) = snapped_ceil(core_ratio(task, config));
    let cores = cores.max(1);
    if cores > config.num_cores as u64 {
        return Err(Error::Config(format!(
            "task needs {cores} cores but only {} exist",
            config.num_cores
        )));
    }
    Ok(cores as u32)
}

/// Smallest core count that leaves a strictly positive download window when
/// the input must be fetched first. Equals [`min_cores`] unless the ratio is
/// an exact integer, in which case one more core is needed.
pub fn min_transfer_cores(task: &TaskSpec, config: &SystemConfig) -> u32 {
    let (cores, exact) = snapped_ceil(core_ratio(task, config));
    (cores + exact as u64).max(1) as u32
}

/// Smallest valid core count for serving the current request, or 0 when its
/// output is already cached.
pub fn required_cores(state: &SystemState, config: &SystemConfig) -> u32 {
    let task = config.task(state.request);
    if state.requested_output_cached() {
        0
    } else if state.requested_input_cached() {
        snapped_ceil(core_ratio(task, config)).0.max(1) as u32
    } else {
        min_transfer_cores(task, config)
    }
}

/// Share of the cores used by the fixed-frequency heuristics.
pub const FIXED_CORE_FRACTION: f64 = 0.75;

/// `round(0.75 * M)`, the core count of the fixed-frequency heuristics
/// (6 of 8 by default).
pub fn fixed_heuristic_cores(config: &SystemConfig) -> u32 {
    ((FIXED_CORE_FRACTION * config.num_cores as f64).round() as u32).max(1)
}

/// Reactive bandwidth and computation energy for serving the request with
/// `cores` cores.
pub fn reactive_cost(state: &SystemState, cores: u32, config: &SystemConfig) -> Result<(f64, f64)> {
    if state.requested_output_cached() {
        return Ok((0.0, 0.0));
    }
    let task = config.task(state.request);
    if cores == 0 {
        return Err(Error::InvalidAction(vec![Violation::LatencyInfeasible {
            cores,
            required: required_cores(state, config),
        }]));
    }
    let workload = task.workload_cycles();
    let cores_f = cores as f64;
    let energy = config.switched_capacitance * cores_f * cores_f * config.core_freq * config.core_freq * workload;
    let compute_time = workload / (cores_f * config.core_freq);
    if state.requested_input_cached() {
        if compute_time > config.slot_seconds * (1.0 + 1e-12) {
            return Err(Error::InvalidAction(vec![Violation::LatencyInfeasible {
                cores,
                required: required_cores(state, config),
            }]));
        }
        return Ok((0.0, energy));
    }
    let window = config.slot_seconds - compute_time;
    if window <= 0.0 || cores < min_transfer_cores(task, config) {
        return Err(Error::InvalidAction(vec![Violation::LatencyInfeasible {
            cores,
            required: required_cores(state, config),
        }]));
    }
    Ok((task.input_bits as f64 / window, energy))
}

/// Bandwidth needed to deliver every pushed input within the slot.
pub fn proactive_cost(push: &[bool], config: &SystemConfig) -> f64 {
    let bits: u64 = config
        .tasks
        .iter()
        .zip(push)
        .filter(|(_, &b)| b)
        .map(|(t, _)| t.input_bits)
        .sum();
    bits as f64 / config.slot_seconds
}

/// Inclusive `(lo, hi)` bounds on one cache delta.
pub type DeltaBounds = (i8, i8);

/// Bounds on the input and output deltas of every task, given the push
/// decision and the core count. Input may be added when it is pushed or
/// downloaded for the current request; output only when computed now.
pub fn delta_bounds(state: &SystemState, push: &[bool], cores: u32) -> (Vec<DeltaBounds>, Vec<DeltaBounds>) {
    let f = state.num_tasks();
    let mut input = Vec::with_capacity(f);
    let mut output = Vec::with_capacity(f);
    for (i, &pushed) in push.iter().enumerate().take(f) {
        let served = i == state.request && cores > 0;
        let s_in = state.cache.input_cached[i] as i8;
        let s_out = state.cache.output_cached[i] as i8;
        let arrives = (pushed || served) as i8;
        input.push((-s_in, arrives.min(1 - s_in)));
        output.push((-s_out, (served as i8).min(1 - s_out)));
    }
    (input, output)
}

/// A reason an action lies outside the valid action set of a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Shape {
        field: String,
        expected: usize,
        got: usize,
    },
    RequestOutOfRange {
        request: usize,
        num_tasks: usize,
    },
    TooManyCores {
        cores: u32,
        max: u32,
    },
    /// Computing although the requested output is cached.
    CoresWithCachedOutput {
        cores: u32,
    },
    /// Too few cores to finish within the slot (or none at all).
    LatencyInfeasible {
        cores: u32,
        required: u32,
    },
    InputDelta {
        task: usize,
        delta: i8,
        lo: i8,
        hi: i8,
    },
    OutputDelta {
        task: usize,
        delta: i8,
        lo: i8,
        hi: i8,
    },
    Capacity {
        used: u64,
        capacity: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { field, expected, got } => {
                write!(f, "{field} has length {got}, expected {expected}")
            }
            Violation::RequestOutOfRange { request, num_tasks } => {
                write!(f, "request {request} outside 0..{num_tasks}")
            }
            Violation::TooManyCores { cores, max } => write!(f, "{cores} cores exceeds {max}"),
            Violation::CoresWithCachedOutput { cores } => {
                write!(f, "{cores} cores allocated although the requested output is cached")
            }
            Violation::LatencyInfeasible { cores, required } => {
                write!(f, "{cores} cores cannot meet the deadline (need {required})")
            }
            Violation::InputDelta { task, delta, lo, hi } => {
                write!(f, "input delta {delta} of task {task} outside [{lo}, {hi}]")
            }
            Violation::OutputDelta { task, delta, lo, hi } => {
                write!(f, "output delta {delta} of task {task} outside [{lo}, {hi}]")
            }
            Violation::Capacity { used, capacity } => {
                write!(f, "updated cache uses {used} bits, capacity {capacity}")
            }
        }
    }
}

/// Outcome of [`validate_action`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidAction(self.violations))
        }
    }
}

/// Checks membership of `action` in the valid action set of `state`: the
/// core bound, latency feasibility of the request, the per-task delta bounds
/// and the post-update capacity. Never fails; returns every violation found.
pub fn validate_action(state: &SystemState, action: &SystemAction, config: &SystemConfig) -> Validation {
    let f = config.num_tasks();
    let mut violations = Vec::new();
    let shapes = [
        ("cache.input_cached", state.cache.input_cached.len()),
        ("cache.output_cached", state.cache.output_cached.len()),
        ("push", action.push.len()),
        ("delta_input", action.delta_input.len()),
        ("delta_output", action.delta_output.len()),
    ];
    for (field, got) in shapes {
        if got != f {
            violations.push(Violation::Shape {
                field: field.to_string(),
                expected: f,
                got,
            });
        }
    }
    if state.request >= f {
        violations.push(Violation::RequestOutOfRange {
            request: state.request,
            num_tasks: f,
        });
    }
    if !violations.is_empty() {
        return Validation { violations };
    }

    let cores = action.reactive_cores;
    if cores > config.num_cores {
        violations.push(Violation::TooManyCores {
            cores,
            max: config.num_cores,
        });
    }
    if state.requested_output_cached() {
        if cores > 0 {
            violations.push(Violation::CoresWithCachedOutput { cores });
        }
    } else {
        let required = required_cores(state, config);
        if cores < required {
            violations.push(Violation::LatencyInfeasible { cores, required });
        }
    }

    let (in_bounds, out_bounds) = delta_bounds(state, &action.push, cores);
    for task in 0..f {
        let (lo, hi) = in_bounds[task];
        let delta = action.delta_input[task];
        if delta < lo || delta > hi {
            violations.push(Violation::InputDelta { task, delta, lo, hi });
        }
        let (lo, hi) = out_bounds[task];
        let delta = action.delta_output[task];
        if delta < lo || delta > hi {
            violations.push(Violation::OutputDelta { task, delta, lo, hi });
        }
    }

    let used: i64 = config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s_in = state.cache.input_cached[i] as i64 + action.delta_input[i] as i64;
            let s_out = state.cache.output_cached[i] as i64 + action.delta_output[i] as i64;
            t.input_bits as i64 * s_in + t.output_bits as i64 * s_out
        })
        .sum();
    if used > config.cache_bits as i64 {
        violations.push(Violation::Capacity {
            used: used as u64,
            capacity: config.cache_bits,
        });
    }
    Validation { violations }
}

/// Applies the cache deltas componentwise.
pub fn apply_cache_update(cache: &CacheState, action: &SystemAction) -> Result<CacheState> {
    let update = |bits: &[bool], deltas: &[i8], what: &str| -> Result<Vec<bool>> {
        bits.iter()
            .zip(deltas)
            .enumerate()
            .map(|(f, (&b, &d))| match b as i8 + d {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::Contract(format!(
                    "{what} cache bit of task {f} would become {v}; validate the action first"
                ))),
            })
            .collect()
    };
    if action.delta_input.len() != cache.num_tasks() || action.delta_output.len() != cache.num_tasks() {
        return Err(Error::Contract("delta length does not match the cache".into()));
    }
    Ok(CacheState {
        input_cached: update(&cache.input_cached, &action.delta_input, "input")?,
        output_cached: update(&cache.output_cached, &action.delta_output, "output")?,
    })
}

/// Cost of executing a (valid) action in a state.
pub fn slot_cost(state: &SystemState, action: &SystemAction, config: &SystemConfig) -> Result<CostBreakdown> {
    let (reactive, energy) = reactive_cost(state, action.reactive_cores, config)?;
    let proactive = proactive_cost(&action.push, config);
    Ok(CostBreakdown::new(reactive, proactive, energy, config.energy_weight))
}

/// Result of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub cost: CostBreakdown,
    pub reward: f64,
}

/// Advances one slot: charges the cost of `action`, updates the cache and
/// moves to `next_request`.
pub fn step(
    state: &SystemState,
    action: &SystemAction,
    next_request: usize,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    validate_action(state, action, config).into_result()?;
    if next_request >= config.num_tasks() {
        return Err(Error::InvalidAction(vec![Violation::RequestOutOfRange {
            request: next_request,
            num_tasks: config.num_tasks(),
        }]));
    }
    let cost = slot_cost(state, action, config)?;
    let cache = apply_cache_update(&state.cache, action)?;
    Ok(StepOutcome {
        next_state: SystemState::new(next_request, cache),
        reward: -config.reward_scale * cost.weighted,
        cost,
    })
}

/// A running simulation: configuration, request chain and current state.
/// Owns its random source; requests are drawn from `chain` after every slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment<R> {
    config: SystemConfig,
    chain: TransitionMatrix,
    initial_cache: CacheState,
    state: SystemState,
    rng: R,
    slot: u64,
}

impl<R: Rng> Environment<R> {
    /// Starts with the request drawn from the chain's limiting distribution
    /// and the given cache contents.
    pub fn new(config: SystemConfig, chain: TransitionMatrix, initial_cache: CacheState, mut rng: R) -> Result<Self> {
        config.validate()?;
        if chain.num_tasks() != config.num_tasks() {
            return Err(Error::Config(format!(
                "chain has {} tasks, configuration has {}",
                chain.num_tasks(),
                config.num_tasks()
            )));
        }
        if initial_cache.num_tasks() != config.num_tasks() || !initial_cache.fits(&config) {
            return Err(Error::Config(format!(
                "initial cache {initial_cache} does not fit the configuration"
            )));
        }
        let request = chain.sample_stationary(&mut rng)?;
        let state = SystemState::new(request, initial_cache.clone());
        Ok(Self {
            config,
            chain,
            initial_cache,
            state,
            rng,
            slot: 0,
        })
    }

    pub fn reset(&mut self) -> Result<&SystemState> {
        let request = self.chain.sample_stationary(&mut self.rng)?;
        self.state = SystemState::new(request, self.initial_cache.clone());
        self.slot = 0;
        Ok(&self.state)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn chain(&self) -> &TransitionMatrix {
        &self.chain
    }

    pub fn initial_cache(&self) -> &CacheState {
        &self.initial_cache
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Executes `action`, samples the next request and returns the slot
    /// outcome. The state is left untouched when the action is rejected.
    pub fn step(&mut self, action: &SystemAction) -> Result<StepOutcome> {
        validate_action(&self.state, action, &self.config).into_result()?;
        let next_request = self.chain.sample_next(self.state.request, &mut self.rng);
        let outcome = step(&self.state, action, next_request, &self.config)?;
        self.state = outcome.next_state.clone();
        self.slot += 1;
        Ok(outcome)
    }

    /// Runs `policy` for `steps` slots from the current state and averages
    /// rewards and cost components.
    pub fn rollout<P>(&mut self, steps: u64, mut policy: P) -> Result<RolloutSummary>
    where
        P: FnMut(&SystemState) -> Result<SystemAction>,
    {
        if steps == 0 {
            return Err(Error::Config("rollout needs at least one slot".into()));
        }
        let mut sum = RolloutSummary::default();
        let mut weight = 1.0;
        for _ in 0..steps {
            let action = policy(&self.state)?;
            let out = self.step(&action)?;
            sum.mean_reward += out.reward;
            sum.mean_cost.reactive_bandwidth += out.cost.reactive_bandwidth;
            sum.mean_cost.proactive_bandwidth += out.cost.proactive_bandwidth;
            sum.mean_cost.energy += out.cost.energy;
            sum.mean_cost.weighted += out.cost.weighted;
            sum.discounted_cost += weight * out.cost.weighted;
            weight *= self.config.discount;
        }
        let n = steps as f64;
        sum.steps = steps;
        sum.mean_reward /= n;
        sum.mean_cost.reactive_bandwidth /= n;
        sum.mean_cost.proactive_bandwidth /= n;
        sum.mean_cost.energy /= n;
        sum.mean_cost.weighted /= n;
        Ok(sum)
    }
}

/// Averages over a [`Environment::rollout`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub steps: u64,
    pub mean_reward: f64,
    /// Per-slot means of every cost component.
    pub mean_cost: CostBreakdown,
    /// `sum_t discount^t * weighted_t` along the run.
    pub discounted_cost: f64,
}
