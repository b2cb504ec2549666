//! Continuous encodings used by learning agents, and the projection of a raw
//! continuous action onto the valid discrete action set.
//!
//! Raw actions live in `[-1, 1]^(1 + 3F)` laid out as
//! `[cores, push_0..push_F, din_0..din_F, dout_0..dout_F]`. Each component is
//! mapped affinely to its natural range (`[0, M]`, `[0, 1]` or `[-1, 1]`),
//! quantised onto the integer grid by uniform thresholds, and the result is
//! repaired by a fixed sequence of correction rules so that it always
//! satisfies every constraint of the system model.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::ActionMask;
use crate::config::SystemConfig;
use crate::env::{delta_bounds, fixed_heuristic_cores, required_cores, validate_action};
use crate::error::{Error, Result};
use crate::state::{CacheState, SystemAction, SystemState};

pub fn state_dim(num_tasks: usize) -> usize {
    3 * num_tasks
}

pub fn action_dim(num_tasks: usize) -> usize {
    1 + 3 * num_tasks
}

/// State as seen by the networks: a `±1` one-hot request block followed by
/// `±1` input-cache and output-cache bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedState(pub Vec<f64>);

impl EncodedState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn sign(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

pub fn encode_state(state: &SystemState) -> EncodedState {
    let f = state.num_tasks();
    let mut v = Vec::with_capacity(state_dim(f));
    v.extend((0..f).map(|i| sign(i == state.request)));
    v.extend(state.cache.input_cached.iter().map(|&b| sign(b)));
    v.extend(state.cache.output_cached.iter().map(|&b| sign(b)));
    EncodedState(v)
}

pub fn decode_state(encoded: &EncodedState, num_tasks: usize) -> Result<SystemState> {
    let v = &encoded.0;
    if v.len() != state_dim(num_tasks) {
        return Err(Error::Contract(format!(
            "encoded state has {} entries, expected {}",
            v.len(),
            state_dim(num_tasks)
        )));
    }
    let hot: Vec<usize> = (0..num_tasks).filter(|&i| v[i] > 0.0).collect();
    let [request] = hot[..] else {
        return Err(Error::Contract(format!("request block has {} hot entries", hot.len())));
    };
    Ok(SystemState::new(
        request,
        CacheState {
            input_cached: v[num_tasks..2 * num_tasks].iter().map(|&x| x > 0.0).collect(),
            output_cached: v[2 * num_tasks..].iter().map(|&x| x > 0.0).collect(),
        },
    ))
}

/// Continuous agent action, every component in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction(pub Vec<f64>);

impl RawAction {
    pub fn num_tasks(&self) -> usize {
        (self.0.len() - 1) / 3
    }

    pub fn cores(&self) -> f64 {
        self.0[0]
    }

    pub fn push(&self, f: usize) -> f64 {
        self.0[1 + f]
    }

    pub fn delta_input(&self, f: usize) -> f64 {
        self.0[1 + self.num_tasks() + f]
    }

    pub fn delta_output(&self, f: usize) -> f64 {
        self.0[1 + 2 * self.num_tasks() + f]
    }

    fn delta(&self, slot: CacheSlot) -> f64 {
        match slot.kind {
            DataKind::Input => self.delta_input(slot.task),
            DataKind::Output => self.delta_output(slot.task),
        }
    }
}

/// Uniform-threshold projection of `value` onto the integers `min..=max`:
/// the interval is cut into `max - min + 1` equal bins.
pub fn quantize_scalar(value: f64, min: i64, max: i64) -> i64 {
    debug_assert!(max >= min);
    let span = (max - min) as f64;
    if span == 0.0 {
        return min;
    }
    let step = span / (span + 1.0);
    let idx = ((value - min as f64) / step).floor();
    let idx = if idx.is_nan() { 0.0 } else { idx.clamp(0.0, span) };
    min + idx as i64
}

/// Center of the bin that [`quantize_scalar`] maps to `level`.
pub fn bin_center(level: i64, min: i64, max: i64) -> f64 {
    let span = (max - min) as f64;
    if span == 0.0 {
        return min as f64;
    }
    let step = span / (span + 1.0);
    min as f64 + ((level - min) as f64 + 0.5) * step
}

fn unit_to(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (raw.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
}

fn to_unit(value: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (value - lo) / (hi - lo) - 1.0
}

/// Maps each raw component to its natural range and quantises it. The result
/// is generally not valid; see [`correct`].
pub fn quantize(raw: &RawAction, state: &SystemState, config: &SystemConfig) -> SystemAction {
    let f = state.num_tasks();
    debug_assert_eq!(raw.0.len(), action_dim(f));
    let m = config.num_cores as i64;
    SystemAction {
        reactive_cores: quantize_scalar(unit_to(raw.cores(), 0.0, m as f64), 0, m) as u32,
        push: (0..f)
            .map(|i| quantize_scalar(unit_to(raw.push(i), 0.0, 1.0), 0, 1) == 1)
            .collect(),
        delta_input: (0..f)
            .map(|i| quantize_scalar(raw.delta_input(i), -1, 1) as i8)
            .collect(),
        delta_output: (0..f)
            .map(|i| quantize_scalar(raw.delta_output(i), -1, 1) as i8)
            .collect(),
    }
}

/// Raw action at the bin centers of `action`; quantising it returns `action`.
pub fn dequantize(action: &SystemAction, config: &SystemConfig) -> RawAction {
    let m = config.num_cores as i64;
    let mut v = Vec::with_capacity(action_dim(action.num_tasks()));
    v.push(to_unit(bin_center(action.reactive_cores as i64, 0, m), 0.0, m as f64));
    v.extend(
        action
            .push
            .iter()
            .map(|&b| to_unit(bin_center(b as i64, 0, 1), 0.0, 1.0)),
    );
    v.extend(action.delta_input.iter().map(|&d| bin_center(d as i64, -1, 1)));
    v.extend(action.delta_output.iter().map(|&d| bin_center(d as i64, -1, 1)));
    RawAction(v)
}

/// Correction stage, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    /// Action-space mask (removes pushes / cache updates a variant may not use).
    Mask,
    /// Clip cache deltas to their per-task bounds.
    ClipDeltas,
    /// Minimum workable cores, or none when the output is cached.
    Cores,
    /// No push for a task with any data cached.
    PushCached,
    /// At most one push, the strongest one.
    SinglePush,
    /// Pushed input is cached.
    CachePushed,
    /// Opportunistic caching of the served task's input/output.
    FillCache,
    /// Evict by ascending raw score until the cache fits.
    Evict,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Rule::Mask => "mask",
            Rule::ClipDeltas => "clip deltas",
            Rule::Cores => "cores",
            Rule::PushCached => "no push when cached",
            Rule::SinglePush => "single push",
            Rule::CachePushed => "cache pushed input",
            Rule::FillCache => "fill cache",
            Rule::Evict => "evict",
        };
        f.write_str(name)
    }
}

/// Action after one correction stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: Rule,
    pub action: SystemAction,
}

/// Corrected action and the per-stage history that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub quantized: SystemAction,
    pub action: SystemAction,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataKind {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CacheSlot {
    task: usize,
    kind: DataKind,
}

impl CacheSlot {
    fn bits(&self, config: &SystemConfig) -> i64 {
        let t = config.task(self.task);
        match self.kind {
            DataKind::Input => t.input_bits as i64,
            DataKind::Output => t.output_bits as i64,
        }
    }

    fn cached(&self, state: &SystemState) -> bool {
        match self.kind {
            DataKind::Input => state.cache.input_cached[self.task],
            DataKind::Output => state.cache.output_cached[self.task],
        }
    }

    fn get(&self, action: &SystemAction) -> i8 {
        match self.kind {
            DataKind::Input => action.delta_input[self.task],
            DataKind::Output => action.delta_output[self.task],
        }
    }

    fn set(&self, action: &mut SystemAction, delta: i8) {
        match self.kind {
            DataKind::Input => action.delta_input[self.task] = delta,
            DataKind::Output => action.delta_output[self.task] = delta,
        }
    }
}

fn post_update_usage(state: &SystemState, action: &SystemAction, config: &SystemConfig) -> i64 {
    config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.input_bits as i64 * (state.cache.input_cached[i] as i64 + action.delta_input[i] as i64)
                + t.output_bits as i64 * (state.cache.output_cached[i] as i64 + action.delta_output[i] as i64)
        })
        .sum()
}

fn clip_deltas(state: &SystemState, action: &mut SystemAction) {
    let (in_bounds, out_bounds) = delta_bounds(state, &action.push, action.reactive_cores);
    for (d, (lo, hi)) in action.delta_input.iter_mut().zip(in_bounds) {
        *d = (*d).clamp(lo, hi);
    }
    for (d, (lo, hi)) in action.delta_output.iter_mut().zip(out_bounds) {
        *d = (*d).clamp(lo, hi);
    }
}

/// [`correct_masked`] with the full action space.
pub fn correct(
    state: &SystemState,
    quantized: &SystemAction,
    raw: &RawAction,
    config: &SystemConfig,
) -> Result<SystemAction> {
    correct_masked(state, quantized, raw, config, ActionMask::FULL)
}

pub fn correct_masked(
    state: &SystemState,
    quantized: &SystemAction,
    raw: &RawAction,
    config: &SystemConfig,
    mask: ActionMask,
) -> Result<SystemAction> {
    correct_traced(state, quantized, raw, config, mask).map(|c| c.action)
}

/// Repairs a quantised action into a valid one.
///
/// Stages run once, in order: mask, clip the deltas, fix the core count,
/// prune pushes (none for cached data, at most one overall) followed by a
/// re-clip so withdrawn pushes lose their cache permission, cache the pushed
/// input, fill free space with the served task's data in descending
/// raw-score order, evict in ascending raw-score order until the capacity
/// holds, final clip.
/// Eviction never touches the pushed input; if the input alone does not fit,
/// the push is withdrawn instead.
pub fn correct_traced(
    state: &SystemState,
    quantized: &SystemAction,
    raw: &RawAction,
    config: &SystemConfig,
    mask: ActionMask,
) -> Result<Correction> {
    let f = config.num_tasks();
    if quantized.num_tasks() != f || raw.0.len() != action_dim(f) || state.num_tasks() != f {
        return Err(Error::Contract(
            "action, raw action and state disagree on task count".into(),
        ));
    }
    let capacity = config.cache_bits as i64;
    let mut a = quantized.clone();
    let mut trace = Vec::with_capacity(9);
    let mut record = |rule: Rule, a: &SystemAction| {
        trace.push(TraceStep {
            rule,
            action: a.clone(),
        })
    };

    if !mask.allow_push || !mask.allow_cache {
        a.push.iter_mut().for_each(|b| *b = false);
    }
    if !mask.allow_cache {
        a.delta_input.iter_mut().for_each(|d| *d = 0);
        a.delta_output.iter_mut().for_each(|d| *d = 0);
    }
    if !mask.allow_core_choice {
        a.reactive_cores = fixed_heuristic_cores(config);
    }
    record(Rule::Mask, &a);

    clip_deltas(state, &mut a);
    record(Rule::ClipDeltas, &a);

    let required = required_cores(state, config);
    a.reactive_cores = if state.requested_output_cached() {
        0
    } else {
        a.reactive_cores.clamp(required, config.num_cores)
    };
    record(Rule::Cores, &a);

    for i in 0..f {
        if state.cache.input_cached[i] || state.cache.output_cached[i] {
            a.push[i] = false;
        }
    }
    record(Rule::PushCached, &a);

    let strongest = (0..f).filter(|&i| a.push[i]).max_by(|&x, &y| {
        raw.push(x)
            .partial_cmp(&raw.push(y))
            .unwrap_or(Ordering::Equal)
            // lower index wins ties
            .then(y.cmp(&x))
    });
    for i in 0..f {
        a.push[i] = Some(i) == strongest;
    }
    clip_deltas(state, &mut a);
    record(Rule::SinglePush, &a);

    if let Some(p) = strongest {
        a.delta_input[p] = 1;
    }
    record(Rule::CachePushed, &a);

    if a.reactive_cores > 0 && mask.allow_cache {
        let req = state.request;
        let mut adds = [
            CacheSlot {
                task: req,
                kind: DataKind::Input,
            },
            CacheSlot {
                task: req,
                kind: DataKind::Output,
            },
        ];
        // stable sort keeps input first on equal scores
        adds.sort_by(|x, y| raw.delta(*y).partial_cmp(&raw.delta(*x)).unwrap_or(Ordering::Equal));
        for slot in adds {
            if slot.cached(state) || slot.get(&a) != 0 {
                continue;
            }
            if post_update_usage(state, &a, config) + slot.bits(config) <= capacity {
                slot.set(&mut a, 1);
            }
        }
    }
    record(Rule::FillCache, &a);

    if post_update_usage(state, &a, config) > capacity {
        let mut held: Vec<CacheSlot> = (0..f)
            .flat_map(|task| {
                [
                    CacheSlot {
                        task,
                        kind: DataKind::Input,
                    },
                    CacheSlot {
                        task,
                        kind: DataKind::Output,
                    },
                ]
            })
            .filter(|s| {
                let present = s.cached(state) as i8 + s.get(&a) == 1;
                let pushed = s.kind == DataKind::Input && Some(s.task) == strongest;
                present && !pushed
            })
            .collect();
        held.sort_by(|x, y| {
            raw.delta(*x)
                .partial_cmp(&raw.delta(*y))
                .unwrap_or(Ordering::Equal)
                .then(x.task.cmp(&y.task))
                .then((x.kind == DataKind::Output).cmp(&(y.kind == DataKind::Output)))
        });
        for slot in held {
            if post_update_usage(state, &a, config) <= capacity {
                break;
            }
            slot.set(&mut a, if slot.cached(state) { -1 } else { 0 });
        }
        if post_update_usage(state, &a, config) > capacity {
            if let Some(p) = strongest {
                a.push[p] = false;
                a.delta_input[p] = 0;
            }
        }
    }
    record(Rule::Evict, &a);

    clip_deltas(state, &mut a);
    record(Rule::ClipDeltas, &a);

    let validation = validate_action(state, &a, config);
    if !validation.is_valid() {
        return Err(Error::Contract(format!(
            "correction produced an invalid action {a} in state {state}: {:?}",
            validation.violations
        )));
    }
    Ok(Correction {
        quantized: quantized.clone(),
        action: a,
        trace,
    })
}

/// Quantises and corrects in one go.
pub fn project(raw: &RawAction, state: &SystemState, config: &SystemConfig, mask: ActionMask) -> Result<SystemAction> {
    let q = quantize(raw, state, config);
    correct_masked(state, &q, raw, config, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn raw_with(f: usize, set: impl FnOnce(&mut Vec<f64>)) -> RawAction {
        let mut v = vec![0.0; action_dim(f)];
        set(&mut v);
        RawAction(v)
    }

    #[test]
    fn encode_examples() {
        let s = SystemState::new(0, CacheState::empty(4));
        let mut expect = vec![-1.0; 12];
        expect[0] = 1.0;
        assert_eq!(encode_state(&s).0, expect);

        let mut c = CacheState::empty(4);
        c.input_cached[1] = true;
        let e = encode_state(&SystemState::new(2, c));
        let hot: Vec<usize> = (0..12).filter(|&i| e.0[i] > 0.0).collect();
        assert_eq!(hot, vec![2, 5]);
    }

    #[test]
    fn encode_decode_exhaustive() {
        let c = cfg();
        let mut n = 0;
        for cache in CacheState::enumerate(&c) {
            for r in 0..4 {
                let s = SystemState::new(r, cache.clone());
                assert_eq!(decode_state(&encode_state(&s), 4).unwrap(), s);
                n += 1;
            }
        }
        assert_eq!(n, 4 * 15);
    }

    #[test]
    fn decode_rejects_bad_request_block() {
        let mut e = encode_state(&SystemState::new(0, CacheState::empty(4)));
        e.0[1] = 1.0;
        assert!(decode_state(&e, 4).is_err());
    }

    #[test]
    fn quantize_scalar_examples() {
        assert_eq!(quantize_scalar(0.3, 0, 1), 0);
        assert_eq!(quantize_scalar(0.7, 0, 1), 1);
        assert_eq!(quantize_scalar(-0.2, -1, 1), 0);
        assert_eq!(quantize_scalar(4.2, 0, 8), 4);
        assert_eq!(quantize_scalar(8.0, 0, 8), 8);
        assert_eq!(quantize_scalar(1.0, -1, 1), 1);
        assert_eq!(quantize_scalar(-1.0, -1, 1), -1);
        assert_eq!(quantize_scalar(0.0, 0, 8), 0);
    }

    #[test]
    fn quantize_maps_ranges() {
        let c = cfg();
        let s = SystemState::new(0, CacheState::empty(4));
        let raw = raw_with(4, |v| {
            v[0] = 1.0;
            v[1] = 1.0;
            v[5] = -1.0;
            v[9] = 0.5;
        });
        let q = quantize(&raw, &s, &c);
        assert_eq!(q.reactive_cores, 8);
        assert_eq!(q.push, vec![true, true, true, true]);
        assert_eq!(q.delta_input, vec![-1, 0, 0, 0]);
        assert_eq!(q.delta_output, vec![1, 0, 0, 0]);
    }

    #[test]
    fn cached_output_means_no_cores() {
        let c = cfg();
        let mut cache = CacheState::empty(4);
        cache.output_cached[1] = true;
        let s = SystemState::new(1, cache);
        for cores in [-1.0, 0.0, 0.7, 1.0] {
            let raw = raw_with(4, |v| v[0] = cores);
            let a = project(&raw, &s, &c, ActionMask::FULL).unwrap();
            assert_eq!(a.reactive_cores, 0);
        }
    }

    #[test]
    fn cores_raised_to_minimum() {
        let c = cfg();
        let s = SystemState::new(0, CacheState::empty(4));
        let a = project(&raw_with(4, |v| v[0] = -1.0), &s, &c, ActionMask::FULL).unwrap();
        assert_eq!(a.reactive_cores, 4);
    }

    #[test]
    fn only_strongest_push_survives() {
        let c = cfg();
        let s = SystemState::new(3, CacheState::empty(4));
        // b̄ = (0.9, 0.8) in [0, 1] → raw 0.8, 0.6
        let raw = raw_with(4, |v| {
            v[0] = 0.4;
            v[1] = 0.8;
            v[2] = 0.6;
            v[3] = -1.0;
            v[4] = -1.0;
        });
        let q = quantize(&raw, &s, &c);
        assert_eq!(q.push, vec![true, true, false, false]);
        let a = correct(&s, &q, &raw, &c).unwrap();
        assert_eq!(a.push, vec![true, false, false, false]);
        assert_eq!(a.delta_input[0], 1);
    }

    #[test]
    fn forced_push_evicts_lowest_score() {
        let c = cfg();
        let mut cache = CacheState::empty(4);
        cache.input_cached[0] = true;
        cache.input_cached[1] = true;
        let s = SystemState::new(0, cache);
        let raw = raw_with(4, |v| {
            v[0] = 0.0;
            v[1] = -1.0;
            v[2] = -1.0;
            v[3] = 1.0; // push task 2
            v[4] = -1.0;
            v[5] = 0.1; // din_0
            v[6] = -0.2; // din_1, lowest score among held items
        });
        let a = project(&raw, &s, &c, ActionMask::FULL).unwrap();
        assert_eq!(a.push, vec![false, false, true, false]);
        assert_eq!(a.delta_input, vec![0, -1, 1, 0]);
        assert_eq!(a.delta_output, vec![0; 4]);
    }

    #[test]
    fn oversized_push_is_withdrawn() {
        let mut c = cfg();
        c.cache_bits = 10_000;
        let s = SystemState::new(0, CacheState::empty(4));
        let raw = raw_with(4, |v| v[2] = 1.0);
        let a = project(&raw, &s, &c, ActionMask::FULL).unwrap();
        assert_eq!(a.push_count(), 0);
        assert_eq!(a.delta_input, vec![0; 4]);
    }

    #[test]
    fn fill_cache_prefers_higher_score() {
        let c = cfg();
        let s = SystemState::new(2, CacheState::empty(4));
        let raw = raw_with(4, |v| {
            v[1..5].iter_mut().for_each(|x| *x = -1.0);
            v[5 + 2] = -0.9;
            v[9 + 2] = -0.5;
        });
        let a = project(&raw, &s, &c, ActionMask::FULL).unwrap();
        // Output (30000) goes first; the input no longer fits.
        assert_eq!(a.delta_output[2], 1);
        assert_eq!(a.delta_input[2], 0);

        let raw = raw_with(4, |v| {
            v[1..5].iter_mut().for_each(|x| *x = -1.0);
            v[5 + 2] = 0.2;
            v[9 + 2] = -0.5;
        });
        let a = project(&raw, &s, &c, ActionMask::FULL).unwrap();
        assert_eq!(a.delta_input[2], 1);
        assert_eq!(a.delta_output[2], 0);
    }

    #[test]
    fn masks_restrict_actions() {
        let c = cfg();
        let s = SystemState::new(1, CacheState::empty(4));
        let raw = RawAction(vec![1.0; action_dim(4)]);
        let dfnc = project(&raw, &s, &c, ActionMask::DFNC).unwrap();
        assert_eq!(dfnc, SystemAction::serve(4, 8));
        let dfc = project(&raw, &s, &c, ActionMask::DFC).unwrap();
        assert_eq!(dfc.push_count(), 0);
        assert!(dfc.delta_input[1] + dfc.delta_output[1] >= 1);
    }

    #[test]
    fn trace_records_every_stage() {
        let c = cfg();
        let s = SystemState::new(0, CacheState::empty(4));
        let raw = RawAction(vec![0.0; action_dim(4)]);
        let q = quantize(&raw, &s, &c);
        let t = correct_traced(&s, &q, &raw, &c, ActionMask::FULL).unwrap();
        let rules: Vec<Rule> = t.trace.iter().map(|s| s.rule).collect();
        assert_eq!(
            rules,
            vec![
                Rule::Mask,
                Rule::ClipDeltas,
                Rule::Cores,
                Rule::PushCached,
                Rule::SinglePush,
                Rule::CachePushed,
                Rule::FillCache,
                Rule::Evict,
                Rule::ClipDeltas
            ]
        );
        assert_eq!(t.trace.last().unwrap().action, t.action);
    }

    #[test]
    fn dequantize_hits_bin_centers() {
        let c = cfg();
        let s = SystemState::new(0, CacheState::empty(4));
        let a = SystemAction {
            reactive_cores: 6,
            push: vec![false, true, false, false],
            delta_input: vec![-1, 0, 1, 0],
            delta_output: vec![0, 1, -1, 0],
        };
        assert_eq!(quantize(&dequantize(&a, &c), &s, &c), a);
    }
}
