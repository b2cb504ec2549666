//! Action-space masks for the learned variants and the recency/frequency
//! heuristics.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{fixed_heuristic_cores, required_cores, validate_action};
use crate::error::{Error, Result};
use crate::state::{SystemAction, SystemState};

/// Which parts of the action a policy may control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask {
    pub allow_push: bool,
    pub allow_cache: bool,
    pub allow_core_choice: bool,
}

impl ActionMask {
    /// Pushing, caching and core choice (PTDFC).
    pub const FULL: Self = Self {
        allow_push: true,
        allow_cache: true,
        allow_core_choice: true,
    };
    pub const PTDFC: Self = Self::FULL;
    /// Reactive service with cache (DFC).
    pub const DFC: Self = Self {
        allow_push: false,
        allow_cache: true,
        allow_core_choice: true,
    };
    /// Reactive service without cache (DFNC).
    pub const DFNC: Self = Self {
        allow_push: false,
        allow_cache: false,
        allow_core_choice: true,
    };

    /// Same mask with cache updates switched off.
    pub fn frozen_cache(self) -> Self {
        Self {
            allow_push: false,
            allow_cache: false,
            ..self
        }
    }
}

/// Request history: when each task was last requested and how often.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecencyFrequencyBook {
    last_used: Vec<Option<u64>>,
    counts: Vec<u64>,
    clock: u64,
}

impl RecencyFrequencyBook {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            last_used: vec![None; num_tasks],
            counts: vec![0; num_tasks],
            clock: 0,
        }
    }

    /// Builds a book from explicit counts with no recency information.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self {
            last_used: vec![None; counts.len()],
            clock: 0,
            counts,
        }
    }

    /// Records a request at the next slot.
    pub fn record(&mut self, task: usize) {
        self.last_used[task] = Some(self.clock);
        self.counts[task] += 1;
        self.clock += 1;
    }

    /// Number of recorded slots.
    pub fn slot(&self) -> u64 {
        self.clock
    }

    pub fn last_used(&self, task: usize) -> Option<u64> {
        self.last_used[task]
    }

    pub fn count(&self, task: usize) -> u64 {
        self.counts[task]
    }

    /// Most recently requested task other than `exclude`, if any was seen.
    pub fn most_recent(&self, exclude: usize) -> Option<usize> {
        (0..self.last_used.len())
            .filter(|&f| f != exclude)
            .filter_map(|f| self.last_used[f].map(|t| (t, f)))
            .max_by_key(|&(t, _)| t)
            .map(|(_, f)| f)
    }

    /// Most frequently requested task other than `exclude`; ties go to the
    /// lower index.
    pub fn most_frequent(&self, exclude: usize) -> Option<usize> {
        (0..self.counts.len())
            .filter(|&f| f != exclude && self.counts[f] > 0)
            .min_by_key(|&f| (std::cmp::Reverse(self.counts[f]), f))
    }

    /// Tasks ordered from least to most recently used; never-used first,
    /// ties by index.
    pub fn recency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.last_used.len()).collect();
        order.sort_by_key(|&f| (self.last_used[f].map_or(0, |t| t + 1), f));
        order
    }

    /// Tasks ordered from least to most frequently used, ties by index.
    pub fn frequency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by_key(|&f| (self.counts[f], f));
        order
    }
}

/// Which history statistic a heuristic ranks tasks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ranking {
    Recency,
    Frequency,
}

/// Most-recently-used push with least-recently-used replacement.
pub fn mru_lru_policy(state: &SystemState, book: &RecencyFrequencyBook, config: &SystemConfig) -> Result<SystemAction> {
    heuristic_policy(state, book, config, Ranking::Recency)
}

/// Most-frequently-used push with least-frequently-used replacement.
pub fn mfu_lfu_policy(state: &SystemState, book: &RecencyFrequencyBook, config: &SystemConfig) -> Result<SystemAction> {
    heuristic_policy(state, book, config, Ranking::Frequency)
}

/// Shared body of the two heuristics. `book` should already contain the
/// current request.
///
/// Serves the request with a fixed core count (raised to the minimum
/// workable value if needed), pushes the input of the top-ranked other task
/// when nothing of it is cached, evicts the lowest-ranked cached data until
/// the pushed input fits, and finally caches the downloaded input of the
/// served task if there is free room.
pub fn heuristic_policy(
    state: &SystemState,
    book: &RecencyFrequencyBook,
    config: &SystemConfig,
    ranking: Ranking,
) -> Result<SystemAction> {
    let f = config.num_tasks();
    let req = state.request;
    let cache = &state.cache;
    let mut a = SystemAction::idle(f);
    if !state.requested_output_cached() {
        a.reactive_cores = fixed_heuristic_cores(config)
            .max(required_cores(state, config))
            .min(config.num_cores);
    }

    let usage = |a: &SystemAction| -> i64 {
        (0..f)
            .map(|i| {
                let t = config.task(i);
                t.input_bits as i64 * (cache.input_cached[i] as i64 + a.delta_input[i] as i64)
                    + t.output_bits as i64 * (cache.output_cached[i] as i64 + a.delta_output[i] as i64)
            })
            .sum()
    };
    let capacity = config.cache_bits as i64;

    let candidate = match ranking {
        Ranking::Recency => book.most_recent(req),
        Ranking::Frequency => book.most_frequent(req),
    };
    if let Some(m) = candidate {
        if !cache.input_cached[m] && !cache.output_cached[m] && config.task(m).input_bits <= config.cache_bits {
            a.push[m] = true;
            a.delta_input[m] = 1;
            let order = match ranking {
                Ranking::Recency => book.recency_order(),
                Ranking::Frequency => book.frequency_order(),
            };
            for victim in order.into_iter().filter(|&v| v != m) {
                if usage(&a) <= capacity {
                    break;
                }
                if cache.input_cached[victim] {
                    a.delta_input[victim] = -1;
                }
                if usage(&a) > capacity && cache.output_cached[victim] {
                    a.delta_output[victim] = -1;
                }
            }
        }
    }

    if a.reactive_cores > 0 && !cache.input_cached[req] && a.delta_input[req] == 0 {
        a.delta_input[req] = 1;
        if usage(&a) > capacity {
            a.delta_input[req] = 0;
        }
    }

    let v = validate_action(state, &a, config);
    if !v.is_valid() {
        return Err(Error::Contract(format!(
            "heuristic produced invalid action {a} in {state}: {:?}",
            v.violations
        )));
    }
    Ok(a)
}
