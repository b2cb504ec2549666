//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Parameters of a network live in one flat `Vec<f64>` (per layer: weights
//! row-major `in x out`, then biases). Optimisers, target averaging and
//! checkpoints all work on that flat vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative, given the activation
    /// output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
        }
    }
}

/// Layer widths and activations. `activations[k]` follows layer `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// `input -> hidden... -> output` with `hidden_act` after every hidden
    /// layer and a linear output.
    pub fn new(input: usize, hidden: &[usize], output: usize, hidden_act: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![hidden_act; hidden.len()];
        activations.push(Activation::Identity);
        Self { widths, activations }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `k`'s weights in the flat parameter vector.
    fn offset(&self, k: usize) -> usize {
        self.widths[..=k].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// A network: its shape plus a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `outputs[0]` is the input batch, `outputs[k + 1]` the output of
    /// layer `k` after its activation.
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }
}

impl Mlp {
    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))`, for
    /// weights and biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(spec.num_params());
        for w in spec.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..w[0] * w[1] + w[1]).map(|_| dist.sample(rng)));
        }
        Self { spec, params }
    }

    /// Like [`Mlp::new`] but the output layer is scaled by `scale`.
    pub fn with_output_scale<R: Rng + ?Sized>(spec: MlpSpec, scale: f64, rng: &mut R) -> Self {
        let mut net = Self::new(spec, rng);
        let last = net.spec.num_layers() - 1;
        let start = net.spec.offset(last);
        net.params[start..].iter_mut().for_each(|p| *p *= scale);
        net
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, k: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = (self.spec.widths[k], self.spec.widths[k + 1]);
        let start = self.spec.offset(k);
        let w = ArrayView2::from_shape((i, o), &self.params[start..start + i * o]).unwrap();
        let b = ArrayView1::from(&self.params[start + i * o..start + i * o + o]);
        (w, b)
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Tape {
        assert_eq!(input.ncols(), self.spec.input_dim(), "input width mismatch");
        let mut outputs = Vec::with_capacity(self.spec.num_layers() + 1);
        outputs.push(input.to_owned());
        for k in 0..self.spec.num_layers() {
            let (w, b) = self.layer(k);
            let x = &outputs[k];
            let mut y = Array2::<f64>::zeros((x.nrows(), w.ncols()));
            y += &b;
            general_mat_mul(1.0, x, &w, 1.0, &mut y);
            self.spec.activations[k].apply(&mut y);
            outputs.push(y);
        }
        Tape { outputs }
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(input).outputs.pop().unwrap()
    }

    /// Backward pass from `d_output` (gradient of the loss w.r.t. the
    /// network output). Accumulates parameter gradients into `param_grad`
    /// when given and returns the gradient w.r.t. the input when
    /// `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        d_output: ArrayView2<'_, f64>,
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        if let Some(g) = param_grad.as_deref() {
            assert_eq!(g.len(), self.params.len(), "gradient buffer size mismatch");
        }
        let mut grad = d_output.to_owned();
        for k in (0..self.spec.num_layers()).rev() {
            self.spec.activations[k].backprop(&tape.outputs[k + 1], &mut grad);
            let x = &tape.outputs[k];
            let (w, _) = self.layer(k);
            if let Some(g) = param_grad.as_deref_mut() {
                let (i, o) = (self.spec.widths[k], self.spec.widths[k + 1]);
                let start = self.spec.offset(k);
                let (gw, gb) = g[start..start + i * o + o].split_at_mut(i * o);
                let mut gw = ArrayViewMut2::from_shape((i, o), gw).unwrap();
                general_mat_mul(1.0, &x.t(), &grad, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &grad.sum_axis(Axis(0));
            }
            if k == 0 && !want_input {
                return None;
            }
            let mut next = Array2::<f64>::zeros((grad.nrows(), w.nrows()));
            general_mat_mul(1.0, &grad, &w.t(), 0.0, &mut next);
            grad = next;
        }
        Some(grad)
    }
}

/// Exponential moving average `target <- xi * online + (1 - xi) * target`.
pub fn soft_update(online: &[f64], target: &mut [f64], xi: f64) {
    assert_eq!(online.len(), target.len());
    for (t, &o) in target.iter_mut().zip(online) {
        *t = xi * o + (1.0 - xi) * *t;
    }
}
