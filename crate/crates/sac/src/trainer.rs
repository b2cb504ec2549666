//! Environment interaction loop: sample a raw action, project it onto a
//! valid system action, step, store the raw action with the realised reward,
//! and update.

use edgecache_core::baselines::ActionMask;
use edgecache_core::codec::{encode_state, project, RawAction};
use edgecache_core::env::{Environment, RolloutSummary, StepOutcome};
use edgecache_core::{CacheState, SystemAction, SystemConfig, SystemState, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{SacAgent, SacConfig, UpdateStats};
use crate::buffer::ReplayBuffer;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const ACT_STREAM: u64 = 2;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training-epoch aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub steps: usize,
    pub mean_reward: f64,
    pub updates: u64,
    pub last_update: Option<UpdateStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    agent: SacAgent,
    buffer: ReplayBuffer,
    env: Environment<ChaCha8Rng>,
    rng: ChaCha8Rng,
    mask: ActionMask,
    steps: u64,
}

impl Trainer {
    /// Every random stream (initial weights, requests, exploration and
    /// minibatches) is derived from `seed`.
    pub fn new(
        system: SystemConfig,
        chain: TransitionMatrix,
        initial_cache: CacheState,
        mask: ActionMask,
        sac: SacConfig,
        seed: u64,
    ) -> Result<Self> {
        let f = system.num_tasks();
        let sd = edgecache_core::codec::state_dim(f);
        let ad = edgecache_core::codec::action_dim(f);
        let agent = SacAgent::new(sd, ad, sac, &mut stream(seed, INIT_STREAM))?;
        let buffer = ReplayBuffer::new(agent.config.buffer_capacity, sd, ad);
        let env = Environment::new(system, chain, initial_cache, stream(seed, ENV_STREAM))?;
        Ok(Self {
            agent,
            buffer,
            env,
            rng: stream(seed, ACT_STREAM),
            mask,
            steps: 0,
        })
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn mask(&self) -> ActionMask {
        self.mask
    }

    pub fn system(&self) -> &SystemConfig {
        self.env.config()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One environment step plus the configured number of updates.
    pub fn step(&mut self) -> Result<(StepOutcome, Option<UpdateStats>)> {
        let state = self.env.state().clone();
        let x = encode_state(&state);
        let cfg = &self.agent.config;
        let raw = if self.steps < cfg.warmup_steps {
            (0..self.agent.action_dim())
                .map(|_| self.rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            self.agent.act(&x.0, &mut self.rng).0
        };
        let action = project(&RawAction(raw.clone()), &state, self.env.config(), self.mask)?;
        let outcome = self.env.step(&action)?;
        let x_next = encode_state(&outcome.next_state);
        self.buffer.push(&x.0, &raw, outcome.reward, &x_next.0);
        self.steps += 1;

        let mut stats = None;
        let ready = self.steps >= cfg.warmup_steps && self.buffer.len() >= cfg.batch_size;
        if ready {
            for _ in 0..cfg.updates_per_step {
                let batch = self.buffer.sample(self.agent.config.batch_size, &mut self.rng);
                stats = Some(self.agent.update_with_rng(&batch, &mut self.rng)?);
            }
        }
        Ok((outcome, stats))
    }

    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let n = self.agent.config.epoch_steps;
        let mut total = 0.0;
        let mut last_update = None;
        for _ in 0..n {
            let (out, stats) = self.step()?;
            total += out.reward;
            last_update = stats.or(last_update);
        }
        Ok(EpochStats {
            steps: n,
            mean_reward: total / n as f64,
            updates: self.agent.updates(),
            last_update,
        })
    }

    /// The exploration-free action for `state`.
    pub fn greedy_action(&self, state: &SystemState) -> Result<SystemAction> {
        greedy_action(&self.agent, state, self.env.config(), self.mask)
    }

    /// Runs the exploration-free policy for `steps` slots on a fresh
    /// environment whose requests are drawn from `seed`.
    pub fn evaluate(&self, steps: u64, seed: u64) -> Result<RolloutSummary> {
        let mut env = Environment::new(
            self.env.config().clone(),
            self.env.chain().clone(),
            self.initial_cache().clone(),
            ChaCha8Rng::seed_from_u64(seed),
        )?;
        Ok(env.rollout(steps, |s| {
            self.greedy_action(s).map_err(|e| match e {
                Error::Core(c) => c,
                other => edgecache_core::Error::Numerical(other.to_string()),
            })
        })?)
    }

    fn initial_cache(&self) -> &CacheState {
        self.env.initial_cache()
    }

    /// Alternates `train_epochs` training epochs with an evaluation of
    /// `eval_epochs` epochs until the schedule's round budget or its
    /// convergence rule stops it.
    pub fn train(&mut self, schedule: &Schedule, eval_seed: u64) -> Result<LearningCurve> {
        let eval_steps = (schedule.eval_epochs * self.agent.config.epoch_steps) as u64;
        let mut tracker = schedule.convergence.map(ConvergenceTracker::new);
        let mut points = Vec::new();
        let mut converged = false;
        for round in 0..schedule.max_rounds {
            for _ in 0..schedule.train_epochs {
                self.train_epoch()?;
            }
            let eval = self.evaluate(eval_steps, eval_seed)?;
            points.push(CurvePoint {
                round,
                train_steps: self.steps,
                evaluation: eval,
            });
            if let Some(t) = tracker.as_mut() {
                if t.observe(eval.mean_reward) {
                    converged = true;
                    break;
                }
            }
        }
        Ok(LearningCurve { points, converged })
    }

    /// Versioned JSON snapshot of the whole training state.
    pub fn checkpoint(&self) -> Result<String> {
        let ck = CheckpointRef {
            version: CHECKPOINT_VERSION,
            trainer: self,
        };
        serde_json::to_string(&ck).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn restore(json: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck.trainer)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    version: u32,
    trainer: &'a Trainer,
}

#[derive(Deserialize)]
struct Checkpoint {
    version: u32,
    trainer: Trainer,
}

/// Projects the policy mean onto a valid action.
pub fn greedy_action(
    agent: &SacAgent,
    state: &SystemState,
    config: &SystemConfig,
    mask: ActionMask,
) -> Result<SystemAction> {
    let raw = agent.act_deterministic(&encode_state(state).0);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            update: agent.updates(),
            what: "non-finite policy output".into(),
        });
    }
    Ok(project(&RawAction(raw), state, config, mask)?)
}

/// Train/evaluate cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub max_rounds: usize,
    pub train_epochs: usize,
    pub eval_epochs: usize,
    pub convergence: Option<ConvergenceRule>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_rounds: 100,
            train_epochs: 10,
            eval_epochs: 10,
            convergence: Some(ConvergenceRule::default()),
        }
    }
}

/// Stop once the evaluation reward changes by less than `tolerance`
/// (relative) for `patience` consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceRule {
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        Self {
            tolerance: 0.01,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTracker {
    rule: ConvergenceRule,
    previous: Option<f64>,
    streak: usize,
}

impl ConvergenceTracker {
    pub fn new(rule: ConvergenceRule) -> Self {
        Self {
            rule,
            previous: None,
            streak: 0,
        }
    }

    /// Feeds the next block mean; true once converged.
    pub fn observe(&mut self, value: f64) -> bool {
        if let Some(p) = self.previous {
            let scale = p.abs().max(value.abs());
            let change = if scale == 0.0 { 0.0 } else { (value - p).abs() / scale };
            if change < self.rule.tolerance {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.previous = Some(value);
        self.streak >= self.rule.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub train_steps: u64,
    pub evaluation: RolloutSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub converged: bool,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::optim::OptimizerKind;
    use edgecache_core::request::build_chain;

    fn tiny() -> SacConfig {
        SacConfig {
            hidden: vec![16],
            activation: Activation::Relu,
            batch_size: 16,
            buffer_capacity: 500,
            warmup_steps: 50,
            epoch_steps: 50,
            optimizer: OptimizerKind::ADAM,
            lr_value: 1e-3,
            lr_q: 1e-3,
            lr_policy: 1e-3,
            lr_alpha: 1e-3,
            ..SacConfig::default()
        }
    }

    fn trainer(seed: u64, cache: CacheState, mask: ActionMask) -> Trainer {
        let sys = SystemConfig::default();
        let chain = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        Trainer::new(sys, chain, cache, mask, tiny(), seed).unwrap()
    }

    #[test]
    fn learning_curve_is_reproducible() {
        let sched = Schedule {
            max_rounds: 2,
            train_epochs: 2,
            eval_epochs: 1,
            convergence: None,
        };
        let run = || {
            let mut t = trainer(3, CacheState::empty(4), ActionMask::FULL);
            t.train(&sched, 11).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 2);
        assert_eq!(a.points[1].train_steps, 200);
    }

    #[test]
    fn stored_actions_are_raw() {
        let mut t = trainer(1, CacheState::empty(4), ActionMask::FULL);
        for _ in 0..30 {
            t.step().unwrap();
        }
        let b = t.buffer().gather(&(0..30).collect::<Vec<_>>());
        // raw warmup actions are continuous, not grid points
        assert!(b.actions.iter().any(|a| a.fract() != 0.0));
        assert!(b.actions.iter().all(|a| a.abs() <= 1.0));
    }

    #[test]
    fn zero_cost_environment_gives_zero_reward() {
        let sys = SystemConfig {
            cache_bits: 10_000_000,
            ..SystemConfig::default()
        };
        let chain = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut t = Trainer::new(
            sys,
            chain,
            CacheState::all_outputs(4),
            ActionMask::FULL.frozen_cache(),
            tiny(),
            5,
        )
        .unwrap();
        for _ in 0..3 {
            let e = t.train_epoch().unwrap();
            assert_eq!(e.mean_reward, 0.0);
        }
        assert_eq!(t.evaluate(200, 1).unwrap().mean_reward, 0.0);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut t = trainer(4, CacheState::empty(4), ActionMask::FULL);
        for _ in 0..120 {
            t.step().unwrap();
        }
        let json = t.checkpoint().unwrap();
        let mut r = Trainer::restore(&json).unwrap();
        assert_eq!(r.checkpoint().unwrap(), json);
        // resumed training follows the original bit for bit
        for _ in 0..40 {
            t.step().unwrap();
            r.step().unwrap();
        }
        assert_eq!(r.agent(), t.agent());
        assert_eq!(r.checkpoint().unwrap(), t.checkpoint().unwrap());

        let bumped = json.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(Trainer::restore(&bumped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn convergence_tracker() {
        let mut t = ConvergenceTracker::new(ConvergenceRule {
            tolerance: 0.01,
            patience: 2,
        });
        assert!(!t.observe(-1.0));
        assert!(!t.observe(-1.5));
        assert!(!t.observe(-1.501));
        assert!(t.observe(-1.502));
        let mut z = ConvergenceTracker::new(ConvergenceRule::default());
        assert!((0..6).map(|_| z.observe(0.0)).last().unwrap());
    }
}
