//! The soft actor-critic learner: networks, optimisers and one update step.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    policy_loss_given, q_loss, q_targets, target_update, temperature_loss, value_loss, ActionCritic, Batch, TwinCritic,
};
use crate::nn::{Activation, Mlp, MlpSpec};
use crate::optim::{Optimizer, OptimizerKind};
use crate::policy::{deterministic_action, policy_sample, sample_batch};

/// Learner hyperparameters. Defaults follow the reference setup: two hidden
/// layers of 256, batch 256, plain SGD at 1e-4, discount 0.99, target
/// smoothing 0.005 every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub lr_value: f64,
    pub lr_q: f64,
    pub lr_policy: f64,
    pub lr_alpha: f64,
    pub optimizer: OptimizerKind,
    /// EMA rate for the target value network.
    pub target_rate: f64,
    /// Updates between target EMA steps.
    pub target_period: u64,
    pub initial_alpha: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    /// Uniform random actions before the policy takes over.
    pub warmup_steps: u64,
    pub updates_per_step: usize,
    pub epoch_steps: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            batch_size: 256,
            buffer_capacity: 10_000_000,
            gamma: 0.99,
            lr_value: 1e-4,
            lr_q: 1e-4,
            lr_policy: 1e-4,
            lr_alpha: 1e-4,
            optimizer: OptimizerKind::Sgd,
            target_rate: 0.005,
            target_period: 1,
            initial_alpha: 1.0,
            target_entropy: None,
            warmup_steps: 1000,
            updates_per_step: 1,
            epoch_steps: 1000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch size must be positive and no larger than the buffer");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) || self.target_period == 0 {
            return bad("target rate must lie in (0, 1] with a positive period");
        }
        let lrs = [self.lr_value, self.lr_q, self.lr_policy, self.lr_alpha];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad("initial temperature must be positive");
        }
        if self.hidden.contains(&0) || self.epoch_steps == 0 {
            return bad("hidden widths and epoch length must be positive");
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}

/// Losses and temperature after one update, measured before the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub value_loss: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Gradients of every objective, all taken at the same parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub value: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub policy: Vec<f64>,
    pub log_alpha: f64,
    pub stats: UpdateStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: Mlp,
    pub value: Mlp,
    pub value_target: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub log_alpha: f64,
    opt_policy: Optimizer,
    opt_value: Optimizer,
    opt_q1: Optimizer,
    opt_q2: Optimizer,
    opt_alpha: Optimizer,
    updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let act = config.activation;
        let h = &config.hidden;
        // small initial policy head keeps early actions spread around zero
        let policy = Mlp::with_output_scale(MlpSpec::new(state_dim, h, 2 * action_dim, act), 0.1, rng);
        let value = Mlp::new(MlpSpec::new(state_dim, h, 1, act), rng);
        let q1 = Mlp::new(MlpSpec::new(state_dim + action_dim, h, 1, act), rng);
        let q2 = Mlp::new(MlpSpec::new(state_dim + action_dim, h, 1, act), rng);
        let kind = config.optimizer;
        Ok(Self {
            opt_policy: Optimizer::new(kind, config.lr_policy, policy.num_params()),
            opt_value: Optimizer::new(kind, config.lr_value, value.num_params()),
            opt_q1: Optimizer::new(kind, config.lr_q, q1.num_params()),
            opt_q2: Optimizer::new(kind, config.lr_q, q2.num_params()),
            opt_alpha: Optimizer::new(kind, config.lr_alpha, 1),
            log_alpha: config.initial_alpha.ln(),
            value_target: value.clone(),
            policy,
            value,
            q1,
            q2,
            updates: 0,
            config,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.value.spec.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.spec.output_dim() / 2
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy_for(self.action_dim())
    }

    /// Stochastic action and its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let noise: Vec<f64> = (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
        policy_sample(&self.policy, state, &noise)
    }

    pub fn act_deterministic(&self, state: &[f64]) -> Vec<f64> {
        deterministic_action(&self.policy, state)
    }

    /// Gradients of the value, twin-Q, policy and temperature objectives on
    /// `batch`, with `noise` (batch x action) driving the fresh policy
    /// actions used by the value target and the policy loss.
    pub fn gradients(&self, batch: &Batch, noise: ArrayView2<'_, f64>) -> Gradients {
        let alpha = self.alpha();
        let critic = TwinCritic {
            q1: &self.q1,
            q2: &self.q2,
        };
        let states = batch.states.view();
        let sample = sample_batch(&self.policy, states, noise);

        // one critic pass serves both the value target and the policy loss
        let (q_pi, dq_pi) = critic.values_and_action_grads(states, sample.actions.view());
        let v_targets = &q_pi - &(alpha * &sample.log_probs);
        let v = value_loss(&self.value, states, v_targets.view());

        let q_t = q_targets(&self.value_target, batch, self.config.gamma);
        let l1 = q_loss(&self.q1, batch, q_t.view());
        let l2 = q_loss(&self.q2, batch, q_t.view());

        let pl = policy_loss_given(&self.policy, &sample, q_pi.view(), dq_pi.view(), alpha);
        let log_probs = sample.log_probs.to_vec();
        let (_, g_alpha) = temperature_loss(self.log_alpha, &log_probs, self.target_entropy());

        Gradients {
            value: v.grad,
            q1: l1.grad,
            q2: l2.grad,
            policy: pl.grad,
            log_alpha: g_alpha,
            stats: UpdateStats {
                value_loss: v.loss,
                q1_loss: l1.loss,
                q2_loss: l2.loss,
                policy_loss: pl.loss,
                alpha,
                entropy: sample.mean_entropy_estimate(),
            },
        }
    }

    /// One gradient step on every network and the temperature, then the
    /// target EMA when due. Nothing is modified if any loss or gradient is
    /// non-finite.
    pub fn update(&mut self, batch: &Batch, noise: ArrayView2<'_, f64>) -> Result<UpdateStats> {
        let g = self.gradients(batch, noise);
        self.check_finite(&g)?;
        self.opt_value.step(&mut self.value.params, &g.value);
        self.opt_q1.step(&mut self.q1.params, &g.q1);
        self.opt_q2.step(&mut self.q2.params, &g.q2);
        self.opt_policy.step(&mut self.policy.params, &g.policy);
        let mut la = [self.log_alpha];
        self.opt_alpha.step(&mut la, &[g.log_alpha]);
        self.log_alpha = la[0];
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_period) {
            target_update(&self.value, &mut self.value_target, self.config.target_rate);
        }
        Ok(g.stats)
    }

    /// Draws the noise from `rng` and updates.
    pub fn update_with_rng<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let noise = Array2::from_shape_simple_fn((batch.len(), self.action_dim()), || rng.sample(StandardNormal));
        self.update(batch, noise.view())
    }

    fn check_finite(&self, g: &Gradients) -> Result<()> {
        let s = &g.stats;
        let scalars = [
            ("value loss", s.value_loss),
            ("q1 loss", s.q1_loss),
            ("q2 loss", s.q2_loss),
            ("policy loss", s.policy_loss),
            ("temperature gradient", g.log_alpha),
        ];
        for (what, v) in scalars {
            if !v.is_finite() {
                return Err(self.diverged(format!("{what} = {v}")));
            }
        }
        let vectors = [("value", &g.value), ("q1", &g.q1), ("q2", &g.q2), ("policy", &g.policy)];
        for (what, v) in vectors {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(self.diverged(format!("non-finite {what} gradient")));
            }
        }
        Ok(())
    }

    fn diverged(&self, what: String) -> Error {
        Error::Diverged {
            update: self.updates,
            what,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SacConfig {
        SacConfig {
            hidden: vec![8],
            activation: Activation::Tanh,
            batch_size: 6,
            ..SacConfig::default()
        }
    }

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize, sd: usize, ad: usize) -> Batch {
        use rand_distr::{Distribution, Uniform};
        let u = Uniform::new(-1.0, 1.0).unwrap();
        Batch {
            states: Array2::from_shape_simple_fn((n, sd), || u.sample(rng)),
            actions: Array2::from_shape_simple_fn((n, ad), || u.sample(rng)),
            rewards: Array1::from_shape_simple_fn(n, || u.sample(rng)),
            next_states: Array2::from_shape_simple_fn((n, sd), || u.sample(rng)),
        }
    }

    #[test]
    fn target_starts_equal_and_entropy_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = SacAgent::new(12, 13, small_config(), &mut rng).unwrap();
        assert_eq!(a.value.params, a.value_target.params);
        assert_eq!(a.target_entropy(), -13.0);
        assert_eq!(a.alpha(), 1.0);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = SacAgent::new(3, 2, small_config(), &mut rng).unwrap();
        let batch = toy_batch(&mut rng, 6, 3, 2);
        let noise = Array2::from_shape_simple_fn((6, 2), || rng.sample(StandardNormal));
        let perm = [3, 0, 5, 1, 4, 2];
        let pick = |m: &Array2<f64>| Array2::from_shape_fn(m.dim(), |(b, j)| m[[perm[b], j]]);
        let shuffled = Batch {
            states: pick(&batch.states),
            actions: pick(&batch.actions),
            rewards: Array1::from_iter(perm.iter().map(|&i| batch.rewards[i])),
            next_states: pick(&batch.next_states),
        };
        let g1 = agent.gradients(&batch, noise.view());
        let g2 = agent.gradients(&shuffled, pick(&noise).view());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        let s = (g1.stats, g2.stats);
        assert!(close(s.0.value_loss, s.1.value_loss));
        assert!(close(s.0.q1_loss, s.1.q1_loss));
        assert!(close(s.0.policy_loss, s.1.policy_loss));
        assert!(close(g1.log_alpha, g2.log_alpha));
        for (a, b) in [
            (&g1.value, &g2.value),
            (&g1.q1, &g2.q1),
            (&g1.q2, &g2.q2),
            (&g1.policy, &g2.policy),
        ] {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| close(*x, *y)));
        }
    }

    #[test]
    fn update_is_deterministic_and_finite() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut agent = SacAgent::new(3, 2, small_config(), &mut rng).unwrap();
            for _ in 0..20 {
                let batch = toy_batch(&mut rng, 6, 3, 2);
                agent.update_with_rng(&batch, &mut rng).unwrap();
            }
            agent
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.policy.params.iter().all(|p| p.is_finite()));
        assert_eq!(a.updates(), 20);
        assert_ne!(a.value.params, a.value_target.params);
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = SacAgent::new(3, 2, small_config(), &mut rng).unwrap();
        let mut batch = toy_batch(&mut rng, 6, 3, 2);
        batch.rewards[0] = f64::NAN;
        let before = agent.clone();
        let err = agent.update_with_rng(&batch, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert_eq!(agent, before);
    }

    #[test]
    fn config_validation() {
        assert!(SacConfig::default().validate().is_ok());
        let bad = SacConfig {
            gamma: 1.0,
            ..SacConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
