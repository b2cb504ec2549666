use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;

/// Which task data is held in the device cache.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheState {
    pub input_cached: Vec<bool>,
    pub output_cached: Vec<bool>,
}

impl CacheState {
    pub fn empty(num_tasks: usize) -> Self {
        Self {
            input_cached: vec![false; num_tasks],
            output_cached: vec![false; num_tasks],
        }
    }

    /// Every output cached and no inputs.
    pub fn all_outputs(num_tasks: usize) -> Self {
        Self {
            input_cached: vec![false; num_tasks],
            output_cached: vec![true; num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.input_cached.len()
    }

    pub fn usage(&self, config: &SystemConfig) -> u64 {
        config.cache_usage(&self.input_cached, &self.output_cached)
    }

    pub fn fits(&self, config: &SystemConfig) -> bool {
        self.usage(config) <= config.cache_bits
    }

    /// Enumerates every cache state that satisfies the capacity constraint,
    /// in lexicographic order of the packed bit pattern.
    pub fn enumerate(config: &SystemConfig) -> Vec<CacheState> {
        let f = config.num_tasks();
        assert!(f <= 16, "cache enumeration limited to 16 tasks");
        (0u64..1 << (2 * f))
            .map(|bits| Self::unpack(bits, f))
            .filter(|c| c.fits(config))
            .collect()
    }

    /// Packs the cache into an integer: bit `f` is input `f`, bit `F + f`
    /// is output `f`.
    pub fn pack(&self) -> u64 {
        let f = self.num_tasks();
        let mut bits = 0u64;
        for i in 0..f {
            bits |= (self.input_cached[i] as u64) << i;
            bits |= (self.output_cached[i] as u64) << (f + i);
        }
        bits
    }

    pub fn unpack(bits: u64, num_tasks: usize) -> Self {
        Self {
            input_cached: (0..num_tasks).map(|i| bits >> i & 1 == 1).collect(),
            output_cached: (0..num_tasks).map(|i| bits >> (num_tasks + i) & 1 == 1).collect(),
        }
    }
}

impl fmt::Display for CacheState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = |v: &[bool]| v.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
        write!(f, "in={} out={}", bits(&self.input_cached), bits(&self.output_cached))
    }
}

/// The request of the current slot together with the cache contents.
/// Task indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub request: usize,
    pub cache: CacheState,
}

impl SystemState {
    pub fn new(request: usize, cache: CacheState) -> Self {
        Self { request, cache }
    }

    pub fn num_tasks(&self) -> usize {
        self.cache.num_tasks()
    }

    pub fn requested_input_cached(&self) -> bool {
        self.cache.input_cached[self.request]
    }

    pub fn requested_output_cached(&self) -> bool {
        self.cache.output_cached[self.request]
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "req={} {}", self.request, self.cache)
    }
}

/// Cores for the requested task, pushes, and per-task cache deltas.
///
/// Cores for non-requested tasks are identically zero and therefore not
/// represented.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemAction {
    pub reactive_cores: u32,
    pub push: Vec<bool>,
    /// Each entry in {-1, 0, 1}.
    pub delta_input: Vec<i8>,
    /// Each entry in {-1, 0, 1}.
    pub delta_output: Vec<i8>,
}

impl SystemAction {
    /// No computation, no push, cache untouched.
    pub fn idle(num_tasks: usize) -> Self {
        Self {
            reactive_cores: 0,
            push: vec![false; num_tasks],
            delta_input: vec![0; num_tasks],
            delta_output: vec![0; num_tasks],
        }
    }

    pub fn serve(num_tasks: usize, cores: u32) -> Self {
        Self {
            reactive_cores: cores,
            ..Self::idle(num_tasks)
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.push.len()
    }

    pub fn push_count(&self) -> usize {
        self.push.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for SystemAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let push: String = self.push.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let delta = |v: &[i8]| {
            v.iter()
                .map(|d| match d {
                    -1 => '-',
                    0 => '0',
                    1 => '+',
                    _ => '?',
                })
                .collect::<String>()
        };
        write!(
            f,
            "cores={} push={} dI={} dO={}",
            self.reactive_cores,
            push,
            delta(&self.delta_input),
            delta(&self.delta_output)
        )
    }
}

/// Per-slot cost components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Bandwidth for on-demand input download, bits/s.
    pub reactive_bandwidth: f64,
    /// Bandwidth for pushed inputs, bits/s.
    pub proactive_bandwidth: f64,
    /// Computation energy.
    pub energy: f64,
    /// `reactive_bandwidth + proactive_bandwidth + energy_weight * energy`.
    pub weighted: f64,
}

impl CostBreakdown {
    pub fn new(reactive_bandwidth: f64, proactive_bandwidth: f64, energy: f64, energy_weight: f64) -> Self {
        Self {
            reactive_bandwidth,
            proactive_bandwidth,
            energy,
            weighted: reactive_bandwidth + proactive_bandwidth + energy_weight * energy,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.reactive_bandwidth + self.proactive_bandwidth
    }
}
