//! Dense feed-forward networks with hand-written reverse-mode gradients and
//! an Adam optimizer.
//!
//! Hidden layers use ReLU; the output layer is identity or tanh. Batches are
//! row-major `(batch, features)` matrices so every layer is a single GEMM.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(layer_dims[l], layer_dims[l + 1])`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output: OutputActivation,
}

/// Per-layer gradients of `sum(output * upstream)`, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    /// Input to every layer; entry 0 is the network input.
    pub fn inputs(&self) -> &[Array2<f64>] {
        &self.inputs
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Network {
    /// Uniform `±1/sqrt(fan_in)` initialisation; the last layer is further
    /// multiplied by `output_scale`.
    pub fn new(layer_dims: &[usize], output: OutputActivation, output_scale: f64, rng: &mut Rng) -> Self {
        assert!(layer_dims.len() >= 2, "a network needs at least an input and an output layer");
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == n_layers { output_scale } else { 1.0 };
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| scale * rng.uniform_range(-bound, bound));
            let b = Array1::from_shape_fn(fan_out, |_| scale * rng.uniform_range(-bound, bound));
            weights.push(w);
            biases.push(b);
        }
        Self { layer_dims: layer_dims.to_vec(), weights, biases, output }
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, output: OutputActivation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Dimension { expected: weights.len(), got: biases.len() });
        }
        let mut layer_dims = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            let prev = *layer_dims.last().unwrap();
            if w.nrows() != prev {
                return Err(Error::Dimension { expected: prev, got: w.nrows() });
            }
            if b.len() != w.ncols() {
                return Err(Error::Dimension { expected: w.ncols(), got: b.len() });
            }
            layer_dims.push(w.ncols());
        }
        Ok(Self { layer_dims, weights, biases, output })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Single-sample forward pass.
    ///
    /// Panics if `x` does not match the input width.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "network input width");
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        self.forward_batch(batch).into_raw_vec_and_offset().0
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        self.apply_output(h)
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> ForwardCache {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w) + b;
            if l < last {
                z.mapv_inplace(relu);
            }
            inputs.push(h);
            h = z;
        }
        ForwardCache { inputs, output: self.apply_output(h) }
    }

    fn apply_output(&self, mut h: Array2<f64>) -> Array2<f64> {
        if self.output == OutputActivation::Tanh {
            h.mapv_inplace(f64::tanh);
        }
        h
    }

    /// Reverse pass for `sum_{batch} output · upstream`.
    ///
    /// Hidden ReLU gates are recovered from the cached post-activations
    /// (a unit is active iff its cached output is positive).
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> ParameterGradients {
        assert_eq!(upstream.dim(), cache.output.dim(), "upstream gradient shape");
        let n_layers = self.weights.len();
        let mut delta = match self.output {
            OutputActivation::Identity => upstream.clone(),
            OutputActivation::Tanh => upstream * &cache.output.mapv(|y| 1.0 - y * y),
        };
        let mut dw = Vec::with_capacity(n_layers);
        let mut db = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let input = &cache.inputs[l];
            dw.push(input.t().dot(&delta));
            db.push(delta.sum_axis(Axis(0)));
            let mut back = delta.dot(&self.weights[l].t());
            if l > 0 {
                // inputs[l] are the ReLU outputs of layer l - 1
                ndarray::Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        dw.reverse();
        db.reverse();
        ParameterGradients { weights: dw, biases: db, input: delta }
    }

    /// Polyak update: `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update(&mut self, online: &Network, tau: f64) {
        for (t, o) in self.weights.iter_mut().zip(&online.weights) {
            t.zip_mut_with(o, |t, &o| *t = (1.0 - tau) * *t + tau * o);
        }
        for (t, o) in self.biases.iter_mut().zip(&online.biases) {
            t.zip_mut_with(o, |t, &o| *t = (1.0 - tau) * *t + tau * o);
        }
    }

    pub fn max_abs_diff(&self, other: &Network) -> f64 {
        let w = self.weights.iter().zip(&other.weights).flat_map(|(a, b)| a.iter().zip(b.iter()));
        let b = self.biases.iter().zip(&other.biases).flat_map(|(a, b)| a.iter().zip(b.iter()));
        w.chain(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint { layer_dims: self.layer_dims.clone(), output: self.output, params: self.flat_params() }
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        let dims = &ckpt.layer_dims;
        if dims.len() < 2 {
            return Err(Error::Dimension { expected: 2, got: dims.len() });
        }
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if ckpt.params.len() != expected {
            return Err(Error::Dimension { expected, got: ckpt.params.len() });
        }
        let mut offset = 0;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let n = w[0] * w[1];
            weights.push(Array2::from_shape_vec((w[0], w[1]), ckpt.params[offset..offset + n].to_vec()).unwrap());
            offset += n;
            biases.push(Array1::from(ckpt.params[offset..offset + w[1]].to_vec()));
            offset += w[1];
        }
        Self::from_parts(weights, biases, ckpt.output)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Serialized network: layer widths and a flat parameter vector, layer by
/// layer, weights (row-major, input-major) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub layer_dims: Vec<usize>,
    pub output: OutputActivation,
    pub params: Vec<f64>,
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> Self {
        let n = net.parameter_count();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Number of parameters tracked.
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step along `grads` (pass the gradient of the loss being
    /// minimised).
    pub fn step(&mut self, net: &mut Network, grads: &ParameterGradients) {
        assert_eq!(self.m.len(), net.parameter_count(), "optimizer/network shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut offset = 0;
        let mut update = |param: &mut f64, g: f64, idx: usize| {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..net.weights.len() {
            for (p, &g) in net.weights[l].iter_mut().zip(grads.weights[l].iter()) {
                update(p, g, offset);
                offset += 1;
            }
            for (p, &g) in net.biases[l].iter_mut().zip(grads.biases[l].iter()) {
                update(p, g, offset);
                offset += 1;
            }
        }
    }
}
