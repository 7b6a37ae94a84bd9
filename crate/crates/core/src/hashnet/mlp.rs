//! Fully connected hashing network: `linear -> batchnorm -> tanh` hidden
//! layers followed by a `linear -> tanh` code layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Descriptor length and hidden widths of the reference architecture.
pub const REFERENCE_INPUT: usize = 372;
pub const REFERENCE_HIDDEN: [usize; 2] = [300, 200];

/// Code lengths of the bit-size study.
pub const GRID_BITS: [usize; 9] = [16, 24, 32, 40, 48, 56, 64, 72, 80];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs x outputs`, row-major.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub norm: Option<BatchNorm>,
}

/// Network parameters. Every layer ends in tanh; all but the last are batch-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// All-zero weights and biases, identity batch norm.
    pub fn zeros(input: usize, hidden: &[usize], bits: usize) -> Result<Self> {
        if input == 0 || bits == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(bits);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
                norm: (i < last).then(|| BatchNorm::new(w[1])),
            })
            .collect();
        Ok(Self { layers })
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_uniform(input: usize, hidden: &[usize], bits: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut p = Self::zeros(input, hidden, bits)?;
        for layer in &mut p.layers {
            let bound = (1.0 / layer.inputs as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = rng.gen_range(-bound..=bound);
            }
            for b in &mut layer.bias {
                *b = rng.gen_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub(crate) fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn bits(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    /// Layer widths from input to code, e.g. `[372, 300, 200, 72]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::Empty("input batch".into()));
        }
        Ok(())
    }

    /// Code activations in `(-1, 1)`. `Mode::Train` normalizes with batch
    /// statistics and folds them into the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Infer => self.infer(x),
            Mode::Train => {
                let tape = self.forward_train(x)?;
                self.update_running_stats(&tape);
                Ok(tape.output().clone())
            }
        }
    }

    /// Inference with running statistics. Pure in `(x, self)`.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = a.matmul(&layer.weights);
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (j, v) in row.iter_mut().enumerate() {
                    let mut t = *v + layer.bias[j];
                    if let Some(bn) = &layer.norm {
                        t = bn.gamma[j] * (t - bn.running_mean[j])
                            / (bn.running_var[j] + BN_EPS).sqrt()
                            + bn.beta[j];
                    }
                    *v = t.tanh();
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Training-mode forward pass that records what backpropagation needs.
    /// Does not touch the running statistics.
    pub fn forward_train(&self, x: &Matrix) -> Result<Tape> {
        self.check_input(x)?;
        let n = x.rows();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = a.matmul(&layer.weights);
            for r in 0..n {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let norm = layer.norm.as_ref().map(|_| {
                let m = layer.outputs;
                let mut mean = vec![0.0; m];
                for r in 0..n {
                    for (acc, v) in mean.iter_mut().zip(z.row(r)) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= n as f64);
                let mut var = vec![0.0; m];
                for r in 0..n {
                    for ((acc, v), mu) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                        *acc += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = Matrix::zeros(n, m);
                for r in 0..n {
                    for j in 0..m {
                        xhat.row_mut(r)[j] = (z.get(r, j) - mean[j]) * inv_std[j];
                    }
                }
                NormTape {
                    mean,
                    var,
                    inv_std,
                    xhat,
                }
            });
            let mut out = Matrix::zeros(n, layer.outputs);
            for r in 0..n {
                for j in 0..layer.outputs {
                    let pre = match (&layer.norm, &norm) {
                        (Some(bn), Some(nt)) => bn.gamma[j] * nt.xhat.get(r, j) + bn.beta[j],
                        _ => z.get(r, j),
                    };
                    out.row_mut(r)[j] = pre.tanh();
                }
            }
            let input = std::mem::replace(&mut a, out.clone());
            layers.push(LayerTape {
                input,
                norm,
                output: out,
            });
        }
        Ok(Tape { layers })
    }

    /// Exponential moving average of the batch statistics recorded in `tape`.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        let n = tape.batch_size() as f64;
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(nt)) = (&mut layer.norm, &lt.norm) {
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] =
                        (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * nt.mean[j];
                    bn.running_var[j] =
                        (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * nt.var[j] * unbias;
                }
            }
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the code activations) through `tape`.
    pub fn backward(&self, tape: &Tape, d_out: &Matrix) -> Gradients {
        let n = tape.batch_size();
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = d_out.clone();
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let m = layer.outputs;
            // through tanh
            let mut d_pre = upstream;
            for (g, a) in d_pre.data_mut().iter_mut().zip(lt.output.data()) {
                *g *= 1.0 - a * a;
            }
            let (d_z, norm_grad) = match (&layer.norm, &lt.norm) {
                (Some(bn), Some(nt)) => {
                    let mut d_gamma = vec![0.0; m];
                    let mut d_beta = vec![0.0; m];
                    let mut sum_dxhat = vec![0.0; m];
                    let mut sum_dxhat_xhat = vec![0.0; m];
                    for r in 0..n {
                        for j in 0..m {
                            let g = d_pre.get(r, j);
                            let xh = nt.xhat.get(r, j);
                            d_gamma[j] += g * xh;
                            d_beta[j] += g;
                            let dxh = g * bn.gamma[j];
                            sum_dxhat[j] += dxh;
                            sum_dxhat_xhat[j] += dxh * xh;
                        }
                    }
                    let mut d_z = Matrix::zeros(n, m);
                    let nf = n as f64;
                    for r in 0..n {
                        for j in 0..m {
                            let dxh = d_pre.get(r, j) * bn.gamma[j];
                            let xh = nt.xhat.get(r, j);
                            d_z.row_mut(r)[j] = nt.inv_std[j] / nf
                                * (nf * dxh - sum_dxhat[j] - xh * sum_dxhat_xhat[j]);
                        }
                    }
                    (d_z, Some((d_gamma, d_beta)))
                }
                _ => (d_pre, None),
            };
            let d_weights = lt.input.t_matmul(&d_z);
            let mut d_bias = vec![0.0; m];
            for r in 0..n {
                for (acc, g) in d_bias.iter_mut().zip(d_z.row(r)) {
                    *acc += g;
                }
            }
            upstream = d_z.matmul_t(&layer.weights);
            grads.push(LayerGrad {
                weights: d_weights,
                bias: d_bias,
                gamma: norm_grad.as_ref().map(|g| g.0.clone()),
                beta: norm_grad.map(|g| g.1),
            });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Sum of `|w|` and of `w^2` over all weight matrices (biases and batch norm excluded).
    pub fn weight_norms(&self) -> (f64, f64) {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for l in &self.layers {
            for w in l.weights.data() {
                l1 += w.abs();
                l2 += w * w;
            }
        }
        (l1, l2)
    }

    /// `param -= lr * grad` for every trainable parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= lr * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
            if let (Some(bn), Some(dg), Some(db)) = (&mut l.norm, &g.gamma, &g.beta) {
                for (p, d) in bn.gamma.iter_mut().zip(dg) {
                    *p -= lr * d;
                }
                for (p, d) in bn.beta.iter_mut().zip(db) {
                    *p -= lr * d;
                }
            }
        }
    }

    /// Visits every trainable scalar in a fixed order (weights, bias, gamma, beta per layer).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weights.data_mut().iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
            if let Some(bn) = &mut l.norm {
                bn.gamma.iter_mut().for_each(&mut f);
                bn.beta.iter_mut().for_each(&mut f);
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param_mut(|_| n += 1);
        n
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NormTape {
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
    xhat: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    input: Matrix,
    norm: Option<NormTape>,
    output: Matrix,
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("nonempty").output
    }

    pub fn batch_size(&self) -> usize {
        self.output().rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Flattened in the order of [`MlpParams::for_each_param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
            if let Some(v) = &g.gamma {
                out.extend_from_slice(v);
            }
            if let Some(v) = &g.beta {
                out.extend_from_slice(v);
            }
        }
        out
    }

    /// Adds `l1 * sign(w) + 2 * l2 * w` to the weight gradients.
    pub fn add_weight_penalty(&mut self, params: &MlpParams, l1: f64, l2: f64) {
        if l1 == 0.0 && l2 == 0.0 {
            return;
        }
        for (g, l) in self.layers.iter_mut().zip(params.layers()) {
            for (d, &w) in g.weights.data_mut().iter_mut().zip(l.weights.data()) {
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *d += l1 * sign + 2.0 * l2 * w;
            }
        }
    }
}
