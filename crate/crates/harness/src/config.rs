//! TOML run configuration.
//!
//! ```toml
//! [system]              # overrides on the default network
//! cache_bits = 30000
//!
//! [chain]
//! p_max = 0.7
//! seed = 7
//!
//! [sac]                 # learner hyperparameters
//! hidden = [64, 64]
//!
//! [schedule]
//! max_rounds = 20
//!
//! [experiment]
//! algorithms = ["ptdfc", "dfc", "dfnc"]
//! seeds = [1, 2, 3]
//! sweep = { variable = "cache_bits", values = [20000, 40000] }
//! ```

use std::path::Path;

use edgecache_core::request::build_chain;
use edgecache_core::{SystemConfig, TaskSpec, TransitionMatrix};
use edgecache_sac::{SacConfig, Schedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Algorithm, InitialCache, Sweep};

/// Seed of the request chain when none is configured.
pub const DEFAULT_CHAIN_SEED: u64 = 1;

/// Field-by-field overrides of [`SystemConfig::default`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemOverrides {
    /// Number of identical default tasks; ignored when `tasks` is given.
    pub num_tasks: Option<usize>,
    pub tasks: Option<Vec<TaskSpec>>,
    pub num_cores: Option<u32>,
    pub core_freq: Option<f64>,
    pub switched_capacitance: Option<f64>,
    pub cache_bits: Option<u64>,
    pub slot_seconds: Option<f64>,
    pub energy_weight: Option<f64>,
    pub discount: Option<f64>,
    pub reward_scale: Option<f64>,
}

impl SystemOverrides {
    pub fn resolve(&self) -> Result<SystemConfig> {
        let mut c = match (&self.tasks, self.num_tasks) {
            (Some(tasks), _) => SystemConfig {
                tasks: tasks.clone(),
                ..SystemConfig::default()
            },
            (None, Some(n)) => SystemConfig::uniform(n, TaskSpec::default()),
            (None, None) => SystemConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(
            num_cores,
            core_freq,
            switched_capacitance,
            cache_bits,
            slot_seconds,
            energy_weight,
            discount,
            reward_scale
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub p_max: f64,
    pub seed: u64,
    /// Explicit transition matrix; replaces the random construction.
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            p_max: 0.7,
            seed: DEFAULT_CHAIN_SEED,
            matrix: None,
        }
    }
}

impl ChainConfig {
    pub fn build(&self, num_tasks: usize) -> Result<TransitionMatrix> {
        let chain = match &self.matrix {
            Some(rows) => TransitionMatrix::from_rows(rows.clone())?,
            None => build_chain(num_tasks, self.p_max, &mut ChaCha8Rng::seed_from_u64(self.seed))?,
        };
        if chain.num_tasks() != num_tasks {
            return Err(Error::Config(format!(
                "chain has {} tasks, system has {num_tasks}",
                chain.num_tasks()
            )));
        }
        Ok(chain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub sweep: Option<Sweep>,
    pub initial_cache: InitialCache,
    /// Disables every cache change and push for all algorithms.
    pub freeze_cache: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Ptdfc],
            seeds: vec![1, 2, 3, 4, 5],
            sweep: None,
            initial_cache: InitialCache::Empty,
            freeze_cache: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemOverrides,
    pub chain: ChainConfig,
    pub sac: SacConfig,
    pub schedule: Schedule,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::SweepVariable;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.system.resolve().unwrap(), SystemConfig::default());
        assert_eq!(c.sac.batch_size, 256);
    }

    #[test]
    fn overrides_and_sections() {
        let c = RunConfig::from_toml(
            r#"
            [system]
            num_tasks = 2
            cache_bits = 30000
            [chain]
            seed = 3
            [sac]
            hidden = [32]
            optimizer = { kind = "adam", beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
            [experiment]
            algorithms = ["dfc", "mru-lru"]
            seeds = [4]
            sweep = { variable = "slot_seconds", values = [0.02, 0.03] }
            "#,
        )
        .unwrap();
        let sys = c.system.resolve().unwrap();
        assert_eq!((sys.num_tasks(), sys.cache_bits), (2, 30000));
        assert_eq!(c.chain.build(2).unwrap().num_tasks(), 2);
        assert_eq!(c.sac.hidden, vec![32]);
        assert_eq!(c.experiment.algorithms, vec![Algorithm::Dfc, Algorithm::MruLru]);
        assert_eq!(c.experiment.sweep.unwrap().variable, SweepVariable::SlotSeconds);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[system]\ncache = 1\n").is_err());
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn invalid_system_rejected() {
        let c = RunConfig::from_toml("[system]\nslot_seconds = 0.001\n").unwrap();
        assert!(c.system.resolve().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.experiment.sweep = Some(Sweep {
            variable: SweepVariable::CacheBits,
            values: vec![1e4, 2e4],
        });
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
