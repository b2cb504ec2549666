//! First-order optimisers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub const ADAM: Self = Self::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Optimiser with its moment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => num_params,
        };
        Self {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                assert_eq!(self.m.len(), params.len());
                let c1 = 1.0 - beta1.powf(self.t as f64);
                let c2 = 1.0 - beta2.powf(self.t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, 2);
        let mut p = [1.0, -1.0];
        o.step(&mut p, &[2.0, -4.0]);
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut o = Optimizer::new(OptimizerKind::ADAM, 0.01, 3);
        let mut p = [0.0; 3];
        o.step(&mut p, &[5.0, -0.001, 0.0]);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-4);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn both_minimise_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::ADAM] {
            let mut o = Optimizer::new(kind, 0.05, 2);
            let mut p = [3.0, -2.0];
            for _ in 0..2000 {
                let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
                o.step(&mut p, &g);
            }
            assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{kind:?} {p:?}");
        }
    }
}
