//! Soft actor-critic objectives and their gradients.
//!
//! Each loss returns its value and the gradient w.r.t. the parameters of the
//! network being trained. Targets never carry gradient.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::{soft_update, Mlp};
use crate::policy::{sample_batch, PolicyBatch};

/// Sampled transitions in row-major batch form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// State-action value with its gradient w.r.t. the action.
pub trait ActionCritic {
    /// Values per row.
    fn values(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array1<f64>;

    /// Values per row and `d value[b] / d action[b]`.
    fn values_and_action_grads(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> (Array1<f64>, Array2<f64>);
}

pub fn state_action(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("row counts match")
}

/// Elementwise minimum of two Q networks.
#[derive(Debug, Clone, Copy)]
pub struct TwinCritic<'a> {
    pub q1: &'a Mlp,
    pub q2: &'a Mlp,
}

impl ActionCritic for TwinCritic<'_> {
    fn values(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array1<f64> {
        let x = state_action(states, actions);
        let a = self.q1.predict(x.view());
        let b = self.q2.predict(x.view());
        ndarray::Zip::from(a.column(0))
            .and(b.column(0))
            .map_collect(|&p, &q| p.min(q))
    }

    fn values_and_action_grads(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> (Array1<f64>, Array2<f64>) {
        let x = state_action(states, actions);
        let t1 = self.q1.forward(x.view());
        let t2 = self.q2.forward(x.view());
        let n = x.nrows();
        let mut d1 = Array2::zeros((n, 1));
        let mut d2 = Array2::zeros((n, 1));
        let mut values = Array1::zeros(n);
        for b in 0..n {
            let (v1, v2) = (t1.output()[[b, 0]], t2.output()[[b, 0]]);
            // ties go to the first network
            if v1 <= v2 {
                values[b] = v1;
                d1[[b, 0]] = 1.0;
            } else {
                values[b] = v2;
                d2[[b, 0]] = 1.0;
            }
        }
        let g1 = self.q1.backward(&t1, d1.view(), None, true).unwrap();
        let g2 = self.q2.backward(&t2, d2.view(), None, true).unwrap();
        let sd = states.ncols();
        let grads = &g1.slice(s![.., sd..]) + &g2.slice(s![.., sd..]);
        (values, grads)
    }
}

fn half_squared_error(net: &Mlp, inputs: ArrayView2<'_, f64>, targets: ArrayView1<'_, f64>) -> LossGrad {
    let tape = net.forward(inputs);
    let pred = tape.output().column(0).to_owned();
    let n = pred.len() as f64;
    let residual = &pred - &targets;
    let loss = 0.5 * residual.mapv(|r| r * r).sum() / n;
    let d_out = (residual / n).insert_axis(Axis(1));
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&tape, d_out.view(), Some(&mut grad), false);
    LossGrad { loss, grad }
}

/// Soft value targets `min Q(x, a~) - alpha log pi(a~|x)` with fresh policy
/// actions `a~` drawn with `noise`.
pub fn value_targets(
    policy: &Mlp,
    critic: &dyn ActionCritic,
    states: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
    alpha: f64,
) -> Array1<f64> {
    let sample = sample_batch(policy, states, noise);
    value_targets_from(&sample, critic, states, alpha)
}

pub fn value_targets_from(
    sample: &PolicyBatch,
    critic: &dyn ActionCritic,
    states: ArrayView2<'_, f64>,
    alpha: f64,
) -> Array1<f64> {
    critic.values(states, sample.actions.view()) - &(alpha * &sample.log_probs)
}

/// `mean 1/2 (V(x) - target)^2` and its gradient w.r.t. the value network.
pub fn value_loss(value: &Mlp, states: ArrayView2<'_, f64>, targets: ArrayView1<'_, f64>) -> LossGrad {
    half_squared_error(value, states, targets)
}

/// Bellman targets `r + gamma V_target(x')`.
pub fn q_targets(value_target: &Mlp, batch: &Batch, gamma: f64) -> Array1<f64> {
    let next = value_target.predict(batch.next_states.view());
    &batch.rewards + &(gamma * &next.column(0))
}

/// `mean 1/2 (Q(x, a) - target)^2` and its gradient w.r.t. the Q network.
pub fn q_loss(q: &Mlp, batch: &Batch, targets: ArrayView1<'_, f64>) -> LossGrad {
    let x = state_action(batch.states.view(), batch.actions.view());
    half_squared_error(q, x.view(), targets)
}

/// Policy objective on a prepared sample.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub log_probs: Array1<f64>,
}

/// `mean alpha log pi(f(e; x)|x) - min Q(x, f(e; x))` with the gradient
/// flowing through both the log-density and the critic's action input.
pub fn policy_loss(
    policy: &Mlp,
    critic: &dyn ActionCritic,
    states: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
    alpha: f64,
) -> PolicyLoss {
    let sample = sample_batch(policy, states, noise);
    policy_loss_from(policy, &sample, critic, states, alpha)
}

pub fn policy_loss_from(
    policy: &Mlp,
    sample: &PolicyBatch,
    critic: &dyn ActionCritic,
    states: ArrayView2<'_, f64>,
    alpha: f64,
) -> PolicyLoss {
    let (q, dq) = critic.values_and_action_grads(states, sample.actions.view());
    policy_loss_given(policy, sample, q.view(), dq.view(), alpha)
}

/// Policy objective from precomputed critic values `q` and action
/// gradients `dq` at the sampled actions.
pub fn policy_loss_given(
    policy: &Mlp,
    sample: &PolicyBatch,
    q: ArrayView1<'_, f64>,
    dq: ArrayView2<'_, f64>,
    alpha: f64,
) -> PolicyLoss {
    let n = q.len() as f64;
    let loss = (alpha * &sample.log_probs - q).sum() / n;
    let dlogp = Array1::from_elem(q.len(), alpha / n);
    let daction = dq.mapv(|g| -g / n);
    let d_out = sample.output_grad(dlogp.view(), daction.view());
    let mut grad = vec![0.0; policy.num_params()];
    policy.backward(&sample.tape, d_out.view(), Some(&mut grad), false);
    PolicyLoss {
        loss,
        grad,
        log_probs: sample.log_probs.clone(),
    }
}

/// Temperature objective `mean(-log_alpha (log pi + target_entropy))` and its
/// gradient `mean(-log pi - target_entropy)` w.r.t. `log_alpha`.
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    let n = log_probs.len().max(1) as f64;
    let grad = log_probs.iter().map(|lp| -lp - target_entropy).sum::<f64>() / n;
    (log_alpha * grad, grad)
}

/// One plain gradient step on `log_alpha`.
pub fn temperature_update(log_alpha: f64, log_probs: &[f64], target_entropy: f64, lr: f64) -> f64 {
    log_alpha - lr * temperature_loss(log_alpha, log_probs, target_entropy).1
}

/// `target <- xi * online + (1 - xi) * target`.
pub fn target_update(online: &Mlp, target: &mut Mlp, xi: f64) {
    soft_update(&online.params, &mut target.params, xi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_loss_examples() {
        let spec = MlpSpec::new(1, &[], 1, Activation::Identity);
        let v = Mlp {
            spec,
            params: vec![0.0, 1.0],
        };
        let x = Array2::zeros((1, 1));
        let l = value_loss(&v, x.view(), Array1::from(vec![0.0]).view());
        assert_eq!(l.loss, 0.5);
        let l = value_loss(&v, x.view(), Array1::from(vec![1.0]).view());
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn q_loss_zero_when_bellman_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Mlp::new(MlpSpec::new(3, &[4], 1, Activation::Tanh), &mut rng);
        let vt = Mlp::new(MlpSpec::new(2, &[4], 1, Activation::Tanh), &mut rng);
        let states = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64 - j as f64) * 0.3);
        let actions = Array2::from_shape_fn((5, 1), |(i, _)| i as f64 * 0.1);
        let next_states = Array2::from_shape_fn((5, 2), |(i, j)| (i * j) as f64 * 0.2);
        let qv = q.predict(state_action(states.view(), actions.view()).view());
        let gamma = 0.9;
        let rewards = &qv.column(0) - &(gamma * &vt.predict(next_states.view()).column(0));
        let batch = Batch {
            states,
            actions,
            rewards,
            next_states,
        };
        let l = q_loss(&q, &batch, q_targets(&vt, &batch, gamma).view());
        assert!(l.loss < 1e-28);

        // gamma = 0 regresses onto the reward
        let t = q_targets(&vt, &batch, 0.0);
        assert_eq!(t, batch.rewards);
    }

    #[test]
    fn temperature_signs() {
        // entropy exactly at target
        let (_, g) = temperature_loss(0.3, &[2.0, 2.0], -2.0);
        assert_eq!(g, 0.0);
        // entropy 1 below target 3: log alpha goes up
        let la = temperature_update(0.0, &[-1.0], 3.0, 0.1);
        assert!(la > 0.0);
    }

    #[test]
    fn target_update_rate() {
        let spec = MlpSpec::new(1, &[], 1, Activation::Identity);
        let online = Mlp {
            spec: spec.clone(),
            params: vec![1.0, 1.0],
        };
        let mut target = Mlp {
            spec,
            params: vec![0.0, 0.0],
        };
        target_update(&online, &mut target, 0.005);
        assert_eq!(target.params, vec![0.005, 0.005]);
        let mut prev = 0.995;
        for _ in 0..100 {
            target_update(&online, &mut target, 0.005);
            let gap = 1.0 - target.params[0];
            assert!((gap / prev - 0.995).abs() < 1e-9);
            prev = gap;
        }
    }
}
