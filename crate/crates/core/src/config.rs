use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-task parameters. The service deadline is shared by all tasks and
/// lives in [`SystemConfig::slot_seconds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Size of the remote input data, in bits.
    pub input_bits: u64,
    /// Size of the computed output, in bits.
    pub output_bits: u64,
    /// Computation load, in CPU cycles per input bit.
    pub cycles_per_bit: u64,
}

impl TaskSpec {
    /// Total CPU cycles needed to compute the task once.
    pub fn workload_cycles(&self) -> f64 {
        self.input_bits as f64 * self.cycles_per_bit as f64
    }
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            input_bits: 16_000,
            output_bits: 30_000,
            cycles_per_bit: 800,
        }
    }
}

/// Network-wide configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of computing cores on the mobile device.
    pub num_cores: u32,
    /// Per-core frequency, in cycles per second.
    pub core_freq: f64,
    /// Effective switched capacitance of the device CPU.
    pub switched_capacitance: f64,
    /// Device cache capacity, in bits.
    pub cache_bits: u64,
    /// Slot length, which is also the maximum tolerable service delay.
    pub slot_seconds: f64,
    /// Weight of computation energy against bandwidth in the system cost.
    pub energy_weight: f64,
    pub discount: f64,
    /// Normalisation applied to the weighted cost to form the reward.
    pub reward_scale: f64,
    pub tasks: Vec<TaskSpec>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::uniform(4, TaskSpec::default())
    }
}

impl SystemConfig {
    /// Default network parameters with `num_tasks` copies of `task`.
    pub fn uniform(num_tasks: usize, task: TaskSpec) -> Self {
        Self {
            num_cores: 8,
            core_freq: 1.7e8,
            switched_capacitance: 1e-19,
            cache_bits: 40_000,
            slot_seconds: 0.02,
            energy_weight: 1.0,
            discount: 0.99,
            reward_scale: 1e-6,
            tasks: vec![task; num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, f: usize) -> &TaskSpec {
        &self.tasks[f]
    }

    /// Checks parameter ranges and that every task can be served within one
    /// slot with all cores, whether or not its input has to be downloaded.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if self.num_cores == 0 {
            return bad("num_cores must be positive".into());
        }
        for (name, v) in [
            ("core_freq", self.core_freq),
            ("switched_capacitance", self.switched_capacitance),
            ("slot_seconds", self.slot_seconds),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.energy_weight.is_finite() && self.energy_weight >= 0.0) {
            return bad(format!(
                "energy_weight must be non-negative, got {}",
                self.energy_weight
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount must lie in [0, 1), got {}", self.discount));
        }
        for (f, t) in self.tasks.iter().enumerate() {
            if t.input_bits == 0 || t.output_bits == 0 || t.cycles_per_bit == 0 {
                return bad(format!("task {f}: sizes and cycles per bit must be positive"));
            }
            let needed = crate::env::min_transfer_cores(t, self);
            if needed > self.num_cores {
                return bad(format!(
                    "task {f}: needs {needed} cores to meet the {}s deadline but only {} exist",
                    self.slot_seconds, self.num_cores
                ));
            }
        }
        Ok(())
    }

    /// Bits occupied by a cache with the given per-task bits.
    pub fn cache_usage(&self, input: &[bool], output: &[bool]) -> u64 {
        self.tasks
            .iter()
            .zip(input.iter().zip(output))
            .map(|(t, (&i, &o))| t.input_bits * i as u64 + t.output_bits * o as u64)
            .sum()
    }
}
