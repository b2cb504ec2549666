//! Experiment orchestration: one job per (algorithm, sweep value, seed),
//! run in parallel and reported in a fixed order.

use std::fmt;
use std::str::FromStr;

use edgecache_core::baselines::{heuristic_policy, ActionMask, Ranking, RecencyFrequencyBook};
use edgecache_core::env::{Environment, RolloutSummary};
use edgecache_core::oracle::{OracleModel, OracleOptions};
use edgecache_core::{CacheState, SystemAction, SystemConfig, TransitionMatrix};
use edgecache_sac::{SacConfig, Schedule, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Learner with push, cache and core choice.
    Ptdfc,
    /// Learner without push.
    Dfc,
    /// Learner choosing cores only.
    Dfnc,
    MruLru,
    MfuLfu,
    /// Exact optimum by value iteration (small instances only).
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ptdfc,
        Algorithm::Dfc,
        Algorithm::Dfnc,
        Algorithm::MruLru,
        Algorithm::MfuLfu,
        Algorithm::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ptdfc => "ptdfc",
            Algorithm::Dfc => "dfc",
            Algorithm::Dfnc => "dfnc",
            Algorithm::MruLru => "mru-lru",
            Algorithm::MfuLfu => "mfu-lfu",
            Algorithm::Oracle => "oracle",
        }
    }

    /// Action mask for the learning variants.
    pub fn mask(self) -> Option<ActionMask> {
        match self {
            Algorithm::Ptdfc => Some(ActionMask::PTDFC),
            Algorithm::Dfc => Some(ActionMask::DFC),
            Algorithm::Dfnc => Some(ActionMask::DFNC),
            _ => None,
        }
    }

    pub fn is_learner(self) -> bool {
        self.mask().is_some()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    CacheBits,
    SlotSeconds,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::CacheBits => "cache_bits",
            SweepVariable::SlotSeconds => "slot_seconds",
        }
    }

    pub fn apply(self, config: &mut SystemConfig, value: f64) -> Result<()> {
        match self {
            SweepVariable::CacheBits => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::Config(format!(
                        "cache size must be a whole number of bits, got {value}"
                    )));
                }
                config.cache_bits = value as u64;
            }
            SweepVariable::SlotSeconds => config.slot_seconds = value,
        }
        Ok(config.validate()?)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cache_bits" | "C" => Ok(SweepVariable::CacheBits),
            "slot_seconds" | "tau" => Ok(SweepVariable::SlotSeconds),
            _ => Err(Error::Config(format!("unknown sweep variable {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = Error;

    /// `var=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (var, list) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep must look like var=v1,v2 (got {s:?})")))?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("sweep value {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep {
            variable: var.trim().parse()?,
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCache {
    #[default]
    Empty,
    /// Every output present; needs room for all of them.
    AllOutputs,
}

impl InitialCache {
    pub fn build(self, num_tasks: usize) -> CacheState {
        match self {
            InitialCache::Empty => CacheState::empty(num_tasks),
            InitialCache::AllOutputs => CacheState::all_outputs(num_tasks),
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub algorithms: Vec<Algorithm>,
    pub system: SystemConfig,
    pub chain: TransitionMatrix,
    pub sac: SacConfig,
    pub schedule: Schedule,
    pub sweep: Option<Sweep>,
    pub seeds: Vec<u64>,
    pub initial_cache: InitialCache,
    pub freeze_cache: bool,
}

impl ExperimentSpec {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let system = config.system.resolve()?;
        let chain = config.chain.build(system.num_tasks())?;
        let spec = Self {
            algorithms: config.experiment.algorithms.clone(),
            system,
            chain,
            sac: config.sac.clone(),
            schedule: config.schedule,
            sweep: config.experiment.sweep.clone(),
            seeds: config.experiment.seeds.clone(),
            initial_cache: config.experiment.initial_cache,
            freeze_cache: config.experiment.freeze_cache,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithm selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.sac.validate()?;
        if self.schedule.eval_epochs == 0 {
            return Err(Error::Config("evaluation needs at least one epoch".into()));
        }
        match &self.sweep {
            None => {
                self.system_at(None)?;
            }
            Some(s) => {
                if s.values.is_empty() || s.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Config("sweep values must be positive".into()));
                }
                for &v in &s.values {
                    self.system_at(Some(v))?;
                }
            }
        }
        Ok(())
    }

    /// The system configuration at a sweep point.
    pub fn system_at(&self, sweep_value: Option<f64>) -> Result<SystemConfig> {
        let mut c = self.system.clone();
        if let (Some(s), Some(v)) = (&self.sweep, sweep_value) {
            s.variable.apply(&mut c, v)?;
        }
        let cache = self.initial_cache.build(c.num_tasks());
        if !cache.fits(&c) {
            return Err(Error::Config(format!(
                "initial cache {cache} does not fit {} bits",
                c.cache_bits
            )));
        }
        Ok(c)
    }

    pub fn eval_steps(&self) -> u64 {
        (self.schedule.eval_epochs * self.sac.epoch_steps) as u64
    }

    /// Jobs ordered by algorithm, then sweep value, then seed.
    pub fn jobs(&self) -> Vec<Job> {
        let values: Vec<Option<f64>> = match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut jobs = Vec::new();
        for &algorithm in &self.algorithms {
            for &sweep_value in &values {
                for &seed in &self.seeds {
                    jobs.push(Job {
                        algorithm,
                        sweep_value,
                        seed,
                    });
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub algorithm: Algorithm,
    pub sweep_value: Option<f64>,
    pub seed: u64,
}

/// Seed of the evaluation request stream for a replica. Shared by every
/// algorithm so comparisons see the same requests.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_e7a1_0000_0000
}

fn row(spec: &ExperimentSpec, job: &Job, epoch: u64, eval: &RolloutSummary, status: Status) -> MetricsRow {
    MetricsRow {
        algorithm: job.algorithm,
        sweep_var: spec.sweep.as_ref().map(|s| s.variable),
        sweep_value: job.sweep_value,
        seed: job.seed,
        epoch,
        mean_reward: eval.mean_reward,
        transmission_cost: eval.mean_cost.bandwidth(),
        computation_cost: eval.mean_cost.energy,
        weighted_cost: eval.mean_cost.weighted,
        status,
    }
}

fn failed_row(spec: &ExperimentSpec, job: &Job, epoch: u64, err: &Error) -> MetricsRow {
    MetricsRow {
        algorithm: job.algorithm,
        sweep_var: spec.sweep.as_ref().map(|s| s.variable),
        sweep_value: job.sweep_value,
        seed: job.seed,
        epoch,
        mean_reward: f64::NAN,
        transmission_cost: f64::NAN,
        computation_cost: f64::NAN,
        weighted_cost: f64::NAN,
        status: Status::Failed(err.to_string()),
    }
}

fn freeze(mut action: SystemAction) -> SystemAction {
    action.push.iter_mut().for_each(|p| *p = false);
    action.delta_input.iter_mut().for_each(|d| *d = 0);
    action.delta_output.iter_mut().for_each(|d| *d = 0);
    action
}

fn eval_env(spec: &ExperimentSpec, system: &SystemConfig, seed: u64) -> Result<Environment<ChaCha8Rng>> {
    Ok(Environment::new(
        system.clone(),
        spec.chain.clone(),
        spec.initial_cache.build(system.num_tasks()),
        ChaCha8Rng::seed_from_u64(eval_seed(seed)),
    )?)
}

fn run_heuristic(spec: &ExperimentSpec, job: &Job, ranking: Ranking) -> Result<RolloutSummary> {
    let system = spec.system_at(job.sweep_value)?;
    let mut env = eval_env(spec, &system, job.seed)?;
    let mut book = RecencyFrequencyBook::new(system.num_tasks());
    Ok(env.rollout(spec.eval_steps(), |s| {
        book.record(s.request);
        let a = heuristic_policy(s, &book, &system, ranking)?;
        Ok(if spec.freeze_cache { freeze(a) } else { a })
    })?)
}

fn run_oracle(spec: &ExperimentSpec, job: &Job) -> Result<RolloutSummary> {
    let system = spec.system_at(job.sweep_value)?;
    let mask = if spec.freeze_cache {
        ActionMask::PTDFC.frozen_cache()
    } else {
        ActionMask::PTDFC
    };
    let options = OracleOptions::default();
    let model = OracleModel::build(&system, &spec.chain, mask, &options)?;
    let solution = model.solve(&options)?;
    let mut env = eval_env(spec, &system, job.seed)?;
    Ok(env.rollout(spec.eval_steps(), |s| {
        let i = model
            .state_index(s)
            .ok_or_else(|| edgecache_core::Error::Contract(format!("state {s:?} outside the model")))?;
        Ok(solution.policy[i].clone())
    })?)
}

/// Builds the learner for a job; exposed so callers can inspect the
/// trained agent.
pub fn trainer_for(spec: &ExperimentSpec, job: &Job) -> Result<Trainer> {
    let system = spec.system_at(job.sweep_value)?;
    let mut mask = job
        .algorithm
        .mask()
        .ok_or_else(|| Error::Config(format!("{} does not learn", job.algorithm)))?;
    if spec.freeze_cache {
        mask = mask.frozen_cache();
    }
    Ok(Trainer::new(
        system.clone(),
        spec.chain.clone(),
        spec.initial_cache.build(system.num_tasks()),
        mask,
        spec.sac.clone(),
        job.seed,
    )?)
}

/// Trains a learner and returns its metrics rows together with the trainer.
pub fn run_learner(spec: &ExperimentSpec, job: &Job) -> (Vec<MetricsRow>, Option<Trainer>) {
    let mut trainer = match trainer_for(spec, job) {
        Ok(t) => t,
        Err(e) => return (vec![failed_row(spec, job, 0, &e)], None),
    };
    match trainer.train(&spec.schedule, eval_seed(job.seed)) {
        Ok(curve) => {
            let n = curve.points.len();
            let rows = curve
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let status = match (i + 1 == n, curve.converged) {
                        (false, _) => Status::Ok,
                        (true, true) => Status::Converged,
                        (true, false) => Status::Budget,
                    };
                    let epoch = ((p.round + 1) * spec.schedule.train_epochs) as u64;
                    row(spec, job, epoch, &p.evaluation, status)
                })
                .collect();
            (rows, Some(trainer))
        }
        Err(e) => {
            let epoch = trainer.steps() / spec.sac.epoch_steps as u64;
            (vec![failed_row(spec, job, epoch, &e.into())], None)
        }
    }
}

/// Runs one replica. Failures are reported as a row, never as an error.
pub fn run_job(spec: &ExperimentSpec, job: &Job) -> Vec<MetricsRow> {
    let fixed = match job.algorithm {
        Algorithm::MruLru => run_heuristic(spec, job, Ranking::Recency),
        Algorithm::MfuLfu => run_heuristic(spec, job, Ranking::Frequency),
        Algorithm::Oracle => run_oracle(spec, job),
        _ => return run_learner(spec, job).0,
    };
    match fixed {
        Ok(eval) => vec![row(spec, job, 0, &eval, Status::Final)],
        Err(e) => vec![failed_row(spec, job, 0, &e)],
    }
}

/// Every job of the experiment, in parallel; rows come back in job order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricsRow>> {
    spec.validate()?;
    let jobs = spec.jobs();
    let blocks: Vec<Vec<MetricsRow>> = jobs.par_iter().map(|j| run_job(spec, j)).collect();
    Ok(blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sac".parse::<Algorithm>().is_err());
    }

    #[test]
    fn sweep_parsing() {
        let s: Sweep = "cache_bits=10000,20000".parse().unwrap();
        assert_eq!(s.variable, SweepVariable::CacheBits);
        assert_eq!(s.values, vec![1e4, 2e4]);
        assert!("cache_bits".parse::<Sweep>().is_err());
        assert!("speed=1".parse::<Sweep>().is_err());
        assert!("tau=0.02,x".parse::<Sweep>().is_err());
    }

    #[test]
    fn job_order() {
        let mut cfg = RunConfig::default();
        cfg.experiment.algorithms = vec![Algorithm::Dfc, Algorithm::MruLru];
        cfg.experiment.seeds = vec![9, 3];
        cfg.experiment.sweep = Some("C=1e4,2e4".parse().unwrap());
        let spec = ExperimentSpec::from_config(&cfg).unwrap();
        let jobs = spec.jobs();
        assert_eq!(jobs.len(), 8);
        assert_eq!(
            (jobs[0].algorithm, jobs[0].sweep_value, jobs[0].seed),
            (Algorithm::Dfc, Some(1e4), 9)
        );
        assert_eq!((jobs[1].seed, jobs[2].sweep_value), (3, Some(2e4)));
        assert_eq!(jobs[4].algorithm, Algorithm::MruLru);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut cfg = RunConfig::default();
        cfg.experiment.seeds.clear();
        assert!(ExperimentSpec::from_config(&cfg).is_err());
        let mut cfg = RunConfig::default();
        cfg.experiment.sweep = Some("tau=0.02,-1".parse().unwrap());
        assert!(ExperimentSpec::from_config(&cfg).is_err());
        let mut cfg = RunConfig::default();
        cfg.experiment.initial_cache = InitialCache::AllOutputs;
        assert!(ExperimentSpec::from_config(&cfg).is_err(), "4 outputs need 120000 bits");
    }

    #[test]
    fn heuristics_report_at_epoch_zero() {
        let mut cfg = RunConfig::default();
        cfg.experiment.algorithms = vec![Algorithm::MruLru, Algorithm::MfuLfu];
        cfg.experiment.seeds = vec![1];
        cfg.schedule.eval_epochs = 1;
        let spec = ExperimentSpec::from_config(&cfg).unwrap();
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!((r.epoch, &r.status), (0, &Status::Final));
            assert!(r.weighted_cost > 0.0);
        }
    }
}
