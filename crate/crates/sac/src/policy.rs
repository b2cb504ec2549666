//! Tanh-squashed diagonal Gaussian policy head.
//!
//! The policy network outputs `[mean, log_std]` per action dimension. An
//! action is `tanh(mean + std * noise)`; its log-density includes the
//! change-of-variables term `-sum log(1 - tanh(u)^2)`, written in the
//! overflow-free form `2 (ln 2 - u - softplus(-2u))`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::nn::{Mlp, Tape};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)^2)`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of a 1-D squashed Gaussian at `action` in (-1, 1).
pub fn squashed_log_density(action: f64, mean: f64, log_std: f64) -> f64 {
    let u = action.atanh();
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_2PI - log1m_tanh_sq(u)
}

/// Everything a batched policy sample needs for the backward pass.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub tape: Tape,
    pub mean: Array2<f64>,
    /// Clamped log standard deviation.
    pub log_std: Array2<f64>,
    /// Whether the raw log-std was inside the clamp range (gradient passes).
    pub log_std_free: Array2<bool>,
    pub noise: Array2<f64>,
    pub pre_tanh: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
}

/// Reparameterised sample for every row of `states` with the given noise.
pub fn sample_batch(policy: &Mlp, states: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>) -> PolicyBatch {
    let tape = policy.forward(states);
    let out = tape.output();
    let dim = out.ncols() / 2;
    assert_eq!(noise.ncols(), dim, "noise dimension must match the action dimension");
    assert_eq!(noise.nrows(), states.nrows());
    let mean = out.slice(ndarray::s![.., ..dim]).to_owned();
    let raw_log_std = out.slice(ndarray::s![.., dim..]);
    let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let log_std_free = raw_log_std.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
    let pre_tanh = &mean + log_std.mapv(f64::exp) * noise;
    let actions = pre_tanh.mapv(f64::tanh);
    let mut log_probs = Array1::zeros(states.nrows());
    for (b, lp) in log_probs.iter_mut().enumerate() {
        *lp = (0..dim)
            .map(|i| {
                let e = noise[[b, i]];
                -0.5 * e * e - log_std[[b, i]] - HALF_LN_2PI - log1m_tanh_sq(pre_tanh[[b, i]])
            })
            .sum();
    }
    PolicyBatch {
        tape,
        mean,
        log_std,
        log_std_free,
        noise: noise.to_owned(),
        pre_tanh,
        actions,
        log_probs,
    }
}

impl PolicyBatch {
    /// Gradient w.r.t. the raw network output of
    /// `sum_b dlogp[b] * logp[b] + sum_b daction[b] . action[b]`, holding the
    /// noise fixed.
    pub fn output_grad(&self, dlogp: ArrayView1<'_, f64>, daction: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, dim) = self.actions.dim();
        let mut grad = Array2::zeros((n, 2 * dim));
        for b in 0..n {
            for i in 0..dim {
                let a = self.actions[[b, i]];
                // d logp / du = 2 tanh(u); d a / du = 1 - a^2
                let du = dlogp[b] * 2.0 * a + daction[[b, i]] * (1.0 - a * a);
                grad[[b, i]] = du;
                if self.log_std_free[[b, i]] {
                    let std = self.log_std[[b, i]].exp();
                    grad[[b, dim + i]] = -dlogp[b] + du * std * self.noise[[b, i]];
                }
            }
        }
        grad
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn mean_entropy_estimate(&self) -> f64 {
        -self.log_probs.mean().unwrap_or(0.0)
    }
}

/// Single-state sample: squashed action and its log-probability.
pub fn policy_sample(policy: &Mlp, state: &[f64], noise: &[f64]) -> (Vec<f64>, f64) {
    let s = ArrayView2::from_shape((1, state.len()), state).unwrap();
    let e = ArrayView2::from_shape((1, noise.len()), noise).unwrap();
    let batch = sample_batch(policy, s, e);
    (batch.actions.row(0).to_vec(), batch.log_probs[0])
}

/// `tanh(mean)`, the action used when exploration is off.
pub fn deterministic_action(policy: &Mlp, state: &[f64]) -> Vec<f64> {
    let s = ArrayView2::from_shape((1, state.len()), state).unwrap();
    let out = policy.predict(s);
    let dim = out.ncols() / 2;
    out.index_axis(Axis(0), 0).iter().take(dim).map(|m| m.tanh()).collect()
}
