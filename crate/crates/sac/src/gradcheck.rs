//! Central finite-difference checks of every loss gradient on small random
//! networks. Used by the test suites; cheap enough to run anywhere.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::losses::{policy_loss, q_loss, q_targets, temperature_loss, value_loss, value_targets, Batch, TwinCritic};
use crate::nn::{Activation, Mlp, MlpSpec};

/// Step of the central difference.
pub const STEP: f64 = 1e-5;

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn numeric_grad(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + STEP;
            let up = loss(&p);
            p[i] = orig - STEP;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; absolute when both
/// vectors vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Random tanh networks, a batch and reparameterisation noise.
pub struct Instance {
    pub policy: Mlp,
    pub value: Mlp,
    pub value_target: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub batch: Batch,
    pub noise: Array2<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = rng.random_range(2..5);
        let ad = rng.random_range(1..4);
        let h = rng.random_range(2..7);
        let n = rng.random_range(3..8);
        let net = |i, o, rng: &mut ChaCha8Rng| Mlp::new(MlpSpec::new(i, &[h], o, Activation::Tanh), rng);
        let policy = net(sd, 2 * ad, &mut rng);
        let value = net(sd, 1, &mut rng);
        let value_target = net(sd, 1, &mut rng);
        let q1 = net(sd + ad, 1, &mut rng);
        let q2 = net(sd + ad, 1, &mut rng);
        let u = Uniform::new(-1.0, 1.0).expect("valid range");
        let mut m = |r, c| Array2::from_shape_simple_fn((r, c), || rng.sample(u));
        let batch = Batch {
            states: m(n, sd),
            actions: m(n, ad),
            rewards: Array1::from_vec(m(n, 1).into_raw_vec_and_offset().0),
            next_states: m(n, sd),
        };
        let noise = Array2::from_shape_simple_fn((n, ad), || rng.sample(StandardNormal));
        Self {
            policy,
            value,
            value_target,
            q1,
            q2,
            batch,
            noise,
            alpha: rng.random_range(0.05..2.0),
            gamma: 0.99,
        }
    }

    fn critic(&self) -> TwinCritic<'_> {
        TwinCritic {
            q1: &self.q1,
            q2: &self.q2,
        }
    }

    pub fn value_error(&self) -> f64 {
        let states = self.batch.states.view();
        let targets = value_targets(&self.policy, &self.critic(), states, self.noise.view(), self.alpha);
        let analytic = value_loss(&self.value, states, targets.view()).grad;
        let numeric = numeric_grad(&self.value.params, |p| {
            value_loss(&with_params(&self.value, p), states, targets.view()).loss
        });
        rel_error(&analytic, &numeric)
    }

    /// Worse of the two critics.
    pub fn q_error(&self) -> f64 {
        let targets = q_targets(&self.value_target, &self.batch, self.gamma);
        [&self.q1, &self.q2]
            .into_iter()
            .map(|q| {
                let analytic = q_loss(q, &self.batch, targets.view()).grad;
                let numeric = numeric_grad(&q.params, |p| {
                    q_loss(&with_params(q, p), &self.batch, targets.view()).loss
                });
                rel_error(&analytic, &numeric)
            })
            .fold(0.0, f64::max)
    }

    pub fn policy_error(&self) -> f64 {
        let critic = self.critic();
        let states = self.batch.states.view();
        let analytic = policy_loss(&self.policy, &critic, states, self.noise.view(), self.alpha).grad;
        let numeric = numeric_grad(&self.policy.params, |p| {
            policy_loss(
                &with_params(&self.policy, p),
                &critic,
                states,
                self.noise.view(),
                self.alpha,
            )
            .loss
        });
        rel_error(&analytic, &numeric)
    }

    /// Gradient with respect to `log alpha`, target entropy `-action_dim`.
    pub fn temperature_error(&self) -> f64 {
        let lp = policy_loss(
            &self.policy,
            &self.critic(),
            self.batch.states.view(),
            self.noise.view(),
            self.alpha,
        )
        .log_probs
        .to_vec();
        let target = -(self.noise.ncols() as f64);
        let la = self.alpha.ln();
        let (_, analytic) = temperature_loss(la, &lp, target);
        let numeric = numeric_grad(&[la], |p| temperature_loss(p[0], &lp, target).0);
        rel_error(&[analytic], &numeric)
    }
}

/// Largest relative errors over a set of instances.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradientReport {
    pub instances: usize,
    pub value: f64,
    pub q: f64,
    pub policy: f64,
    pub temperature: f64,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.value.max(self.q).max(self.policy).max(self.temperature)
    }
}

pub fn check_instances(seeds: impl IntoIterator<Item = u64>) -> GradientReport {
    let mut r = GradientReport::default();
    for seed in seeds {
        let ins = Instance::random(seed);
        r.instances += 1;
        r.value = r.value.max(ins.value_error());
        r.q = r.q.max(ins.q_error());
        r.policy = r.policy.max(ins.policy_error());
        r.temperature = r.temperature.max(ins.temperature_error());
    }
    r
}

pub fn with_params(net: &Mlp, p: &[f64]) -> Mlp {
    Mlp {
        spec: net.spec.clone(),
        params: p.to_vec(),
    }
}
