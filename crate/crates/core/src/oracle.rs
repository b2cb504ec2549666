//! Exhaustive value iteration over the full valid action set, for instances
//! small enough to enumerate. Used as a ground-truth reference for learned
//! and heuristic policies.
//!
//! Values are kept in reward units (weighted cost times the reward scale) so
//! the convergence tolerance is meaningful in absolute terms.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::ActionMask;
use crate::config::SystemConfig;
use crate::env::{delta_bounds, fixed_heuristic_cores, required_cores, slot_cost, validate_action};
use crate::error::{Error, Result};
use crate::request::TransitionMatrix;
use crate::state::{CacheState, SystemAction, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Sup-norm Bellman residual at which iteration stops.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Refuse instances whose raw state-action count exceeds this.
    pub max_pairs: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_sweeps: 1_000_000,
            max_pairs: 5e7,
        }
    }
}

/// Upper bound on the number of state-action pairs before pruning:
/// `F * 4^F * (M + 1) * 2^F * 4^F` (request, cache bits, cores, pushes, and
/// two admissible values per cache delta).
pub fn size_estimate(config: &SystemConfig) -> f64 {
    let f = config.num_tasks() as f64;
    f * 4f64.powf(f) * (config.num_cores as f64 + 1.0) * 2f64.powf(f) * 4f64.powf(f)
}

/// A distinct outcome available in a state: actions with the same next cache
/// are merged, keeping the cheapest.
#[derive(Debug, Clone)]
struct Choice {
    cost: f64,
    next_cache: usize,
    action: SystemAction,
}

/// Enumerated MDP for one configuration, request chain and mask.
#[derive(Debug, Clone)]
pub struct OracleModel {
    config: SystemConfig,
    chain: TransitionMatrix,
    caches: Vec<CacheState>,
    cache_index: HashMap<u64, usize>,
    choices: Vec<Vec<Choice>>,
}

/// Every valid action of `state` permitted by `mask`, in a fixed order.
pub fn enumerate_actions(state: &SystemState, config: &SystemConfig, mask: ActionMask) -> Vec<SystemAction> {
    let f = config.num_tasks();
    let core_options: Vec<u32> = if state.requested_output_cached() {
        vec![0]
    } else if mask.allow_core_choice {
        (required_cores(state, config)..=config.num_cores).collect()
    } else {
        vec![fixed_heuristic_cores(config).max(required_cores(state, config))]
    };
    let push_sets: u32 = if mask.allow_push && mask.allow_cache { 1 << f } else { 1 };
    let mut out = Vec::new();
    for &cores in &core_options {
        for push_bits in 0..push_sets {
            let push: Vec<bool> = (0..f).map(|i| push_bits >> i & 1 == 1).collect();
            let (in_b, out_b) = delta_bounds(state, &push, cores);
            let ranges: Vec<(i8, i8)> = if mask.allow_cache {
                in_b.into_iter().chain(out_b).collect()
            } else {
                vec![(0, 0); 2 * f]
            };
            let mut deltas: Vec<i8> = ranges.iter().map(|r| r.0).collect();
            loop {
                let a = SystemAction {
                    reactive_cores: cores,
                    push: push.clone(),
                    delta_input: deltas[..f].to_vec(),
                    delta_output: deltas[f..].to_vec(),
                };
                if validate_action(state, &a, config).is_valid() {
                    out.push(a);
                }
                // odometer over the per-delta ranges
                let mut k = 0;
                while k < deltas.len() {
                    if deltas[k] < ranges[k].1 {
                        deltas[k] += 1;
                        break;
                    }
                    deltas[k] = ranges[k].0;
                    k += 1;
                }
                if k == deltas.len() {
                    break;
                }
            }
        }
    }
    out
}

/// Converged values, greedy policy and the stationary-start discounted cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSolution {
    pub states: Vec<SystemState>,
    /// Optimal discounted cost per state, in reward units.
    pub values: Vec<f64>,
    pub policy: Vec<SystemAction>,
    /// `sum_f p_f V(f, empty cache)` in raw cost units.
    pub discounted_cost: f64,
    pub sweeps: usize,
    pub residual: f64,
}

/// Values of a fixed policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyValue {
    pub values: Vec<f64>,
    pub discounted_cost: f64,
}

impl OracleModel {
    pub fn build(
        config: &SystemConfig,
        chain: &TransitionMatrix,
        mask: ActionMask,
        options: &OracleOptions,
    ) -> Result<Self> {
        config.validate()?;
        chain.validate()?;
        if chain.num_tasks() != config.num_tasks() {
            return Err(Error::Config("chain and configuration disagree on task count".into()));
        }
        let estimate = size_estimate(config);
        if estimate > options.max_pairs {
            return Err(Error::TooLarge {
                estimate,
                limit: options.max_pairs,
            });
        }
        let f = config.num_tasks();
        let caches = CacheState::enumerate(config);
        let cache_index: HashMap<u64, usize> = caches.iter().enumerate().map(|(i, c)| (c.pack(), i)).collect();
        let mut model = Self {
            config: config.clone(),
            chain: chain.clone(),
            caches,
            cache_index,
            choices: Vec::new(),
        };
        let mut choices = Vec::with_capacity(model.num_states());
        for s in 0..model.num_states() {
            let state = model.state(s);
            let mut best: HashMap<usize, Choice> = HashMap::new();
            let mut order = Vec::new();
            for action in enumerate_actions(&state, config, mask) {
                let cost = slot_cost(&state, &action, config)?.weighted * config.reward_scale;
                let next = crate::env::apply_cache_update(&state.cache, &action)?;
                let next_cache = model.cache_index[&next.pack()];
                match best.get_mut(&next_cache) {
                    Some(c) if c.cost <= cost => {}
                    Some(c) => {
                        *c = Choice {
                            cost,
                            next_cache,
                            action,
                        }
                    }
                    None => {
                        order.push(next_cache);
                        best.insert(
                            next_cache,
                            Choice {
                                cost,
                                next_cache,
                                action,
                            },
                        );
                    }
                }
            }
            if order.is_empty() {
                return Err(Error::Contract(format!("state {state} has no valid action")));
            }
            choices.push(order.into_iter().map(|k| best.remove(&k).unwrap()).collect());
        }
        debug_assert_eq!(choices.len(), f * model.caches.len());
        model.choices = choices;
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.caches.len() * self.config.num_tasks()
    }

    pub fn state(&self, index: usize) -> SystemState {
        let f = self.config.num_tasks();
        SystemState::new(index % f, self.caches[index / f].clone())
    }

    pub fn state_index(&self, state: &SystemState) -> Option<usize> {
        self.cache_index
            .get(&state.cache.pack())
            .map(|c| c * self.config.num_tasks() + state.request)
    }

    /// `sum_j q(request, j) V(j, cache)`.
    fn continuation(&self, values: &[f64], request: usize, cache: usize) -> f64 {
        let f = self.config.num_tasks();
        self.chain.probs[request]
            .iter()
            .enumerate()
            .map(|(j, q)| q * values[cache * f + j])
            .sum()
    }

    fn q_value(&self, values: &[f64], s: usize, c: &Choice) -> f64 {
        let f = self.config.num_tasks();
        c.cost + self.config.discount * self.continuation(values, s % f, c.next_cache)
    }

    /// One synchronous Bellman optimality sweep.
    pub fn bellman(&self, values: &[f64]) -> Vec<f64> {
        (0..self.num_states())
            .map(|s| {
                self.choices[s]
                    .iter()
                    .map(|c| self.q_value(values, s, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Greedy action per state; the first choice within a relative 1e-12 of
    /// the minimum wins, so ties resolve deterministically.
    pub fn greedy(&self, values: &[f64]) -> Vec<SystemAction> {
        (0..self.num_states())
            .map(|s| {
                let q: Vec<f64> = self.choices[s].iter().map(|c| self.q_value(values, s, c)).collect();
                let min = q.iter().copied().fold(f64::INFINITY, f64::min);
                let tol = 1e-12 * min.abs().max(1.0);
                let k = q.iter().position(|&v| v <= min + tol).unwrap();
                self.choices[s][k].action.clone()
            })
            .collect()
    }

    /// Value iteration from zero until the sup-norm residual drops below the
    /// tolerance.
    pub fn solve(&self, options: &OracleOptions) -> Result<OracleSolution> {
        let mut values = vec![0.0; self.num_states()];
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while residual >= options.tolerance {
            if sweeps >= options.max_sweeps {
                return Err(Error::Numerical(format!(
                    "value iteration stopped after {sweeps} sweeps with residual {residual:e}"
                )));
            }
            let next = self.bellman(&values);
            residual = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            values = next;
            sweeps += 1;
        }
        let policy = self.greedy(&values);
        let discounted_cost = self.stationary_start(&values, &CacheState::empty(self.config.num_tasks()))?;
        Ok(OracleSolution {
            states: (0..self.num_states()).map(|s| self.state(s)).collect(),
            values,
            policy,
            discounted_cost,
            sweeps,
            residual,
        })
    }

    /// Expected raw discounted cost when the first request follows the
    /// limiting distribution and the cache starts as `initial`.
    pub fn stationary_start(&self, values: &[f64], initial: &CacheState) -> Result<f64> {
        let p = self.chain.limiting_distribution()?;
        let c = *self
            .cache_index
            .get(&initial.pack())
            .ok_or_else(|| Error::Config(format!("initial cache {initial} does not fit")))?;
        let f = self.config.num_tasks();
        Ok(p.iter().enumerate().map(|(j, pj)| pj * values[c * f + j]).sum::<f64>() / self.config.reward_scale)
    }

    /// Evaluates a deterministic stationary policy exactly (iterative policy
    /// evaluation to a sup-norm change below `tolerance`).
    pub fn evaluate<P>(&self, mut policy: P, tolerance: f64) -> Result<PolicyValue>
    where
        P: FnMut(&SystemState) -> Result<SystemAction>,
    {
        let n = self.num_states();
        let f = self.config.num_tasks();
        let mut plan = Vec::with_capacity(n);
        for s in 0..n {
            let state = self.state(s);
            let action = policy(&state)?;
            let cost = slot_cost(&state, &action, &self.config)?.weighted * self.config.reward_scale;
            let next = crate::env::apply_cache_update(&state.cache, &action)?;
            plan.push((cost, self.cache_index[&next.pack()]));
        }
        let mut values = vec![0.0; n];
        for _ in 0..10_000_000 {
            let next: Vec<f64> = (0..n)
                .map(|s| plan[s].0 + self.config.discount * self.continuation(&values, s % f, plan[s].1))
                .collect();
            let change = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            values = next;
            if change < tolerance {
                let discounted_cost = self.stationary_start(&values, &CacheState::empty(f))?;
                return Ok(PolicyValue {
                    values,
                    discounted_cost,
                });
            }
        }
        Err(Error::Numerical("policy evaluation did not converge".into()))
    }
}

/// Builds the model and solves it.
pub fn exact_value_iteration(
    config: &SystemConfig,
    chain: &TransitionMatrix,
    mask: ActionMask,
    options: &OracleOptions,
) -> Result<OracleSolution> {
    OracleModel::build(config, chain, mask, options)?.solve(options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskSpec;
    use crate::env::reactive_cost;

    fn two_task() -> (SystemConfig, TransitionMatrix) {
        let config = SystemConfig::uniform(2, TaskSpec::default());
        let chain = TransitionMatrix::from_rows(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
        (config, chain)
    }

    #[test]
    fn single_task_closed_form() {
        let mut config = SystemConfig::uniform(1, TaskSpec::default());
        config.cache_bits = 0;
        let chain = TransitionMatrix::from_rows(vec![vec![1.0]]).unwrap();
        let sol = exact_value_iteration(&config, &chain, ActionMask::DFNC, &OracleOptions::default()).unwrap();
        let s = SystemState::new(0, CacheState::empty(1));
        let per_slot = (4..=8)
            .map(|c| {
                let (b, e) = reactive_cost(&s, c, &config).unwrap();
                b + config.energy_weight * e
            })
            .fold(f64::INFINITY, f64::min);
        let expected = per_slot / (1.0 - config.discount);
        assert!((sol.discounted_cost - expected).abs() <= 1e-8 * expected);
        assert_eq!(sol.policy[0].reactive_cores, 6);
    }

    #[test]
    fn zero_cost_configuration() {
        let (mut config, chain) = two_task();
        config.cache_bits = 2 * (16_000 + 30_000);
        let model = OracleModel::build(
            &config,
            &chain,
            ActionMask::FULL.frozen_cache(),
            &OracleOptions::default(),
        )
        .unwrap();
        let sol = model.solve(&OracleOptions::default()).unwrap();
        let start = model
            .stationary_start(&sol.values, &CacheState::all_outputs(2))
            .unwrap();
        assert_eq!(start, 0.0);
    }

    #[test]
    fn nested_masks_order_costs() {
        let (config, chain) = two_task();
        let opts = OracleOptions::default();
        let full = exact_value_iteration(&config, &chain, ActionMask::PTDFC, &opts).unwrap();
        let dfc = exact_value_iteration(&config, &chain, ActionMask::DFC, &opts).unwrap();
        let dfnc = exact_value_iteration(&config, &chain, ActionMask::DFNC, &opts).unwrap();
        assert!(full.discounted_cost <= dfc.discounted_cost + 1e-6);
        assert!(dfc.discounted_cost <= dfnc.discounted_cost + 1e-6);
        assert!(dfc.discounted_cost < dfnc.discounted_cost);
    }

    #[test]
    fn sweeps_are_monotone_and_greedy_is_fixed() {
        let (config, chain) = two_task();
        let opts = OracleOptions::default();
        let model = OracleModel::build(&config, &chain, ActionMask::FULL, &opts).unwrap();
        let mut v = vec![0.0; model.num_states()];
        for _ in 0..200 {
            let next = model.bellman(&v);
            assert!(next.iter().zip(&v).all(|(a, b)| *a >= *b - 1e-12));
            v = next;
        }
        let sol = model.solve(&opts).unwrap();
        assert!(sol.residual < 1e-9);
        let again = model.bellman(&sol.values);
        assert_eq!(model.greedy(&again), sol.policy);
    }

    #[test]
    fn refuses_large_instances() {
        let config = SystemConfig::uniform(5, TaskSpec::default());
        let chain = TransitionMatrix::from_rows(vec![vec![0.2; 5]; 5]).unwrap();
        assert!(matches!(
            OracleModel::build(&config, &chain, ActionMask::FULL, &OracleOptions::default()),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn evaluating_the_optimal_policy_reproduces_its_value() {
        let (config, chain) = two_task();
        let opts = OracleOptions::default();
        let model = OracleModel::build(&config, &chain, ActionMask::FULL, &opts).unwrap();
        let sol = model.solve(&opts).unwrap();
        let eval = model
            .evaluate(|s| Ok(sol.policy[model.state_index(s).unwrap()].clone()), 1e-11)
            .unwrap();
        assert!((eval.discounted_cost - sol.discounted_cost).abs() <= 1e-6 * sol.discounted_cost);
    }
}
