//! Pairwise deep-supervised-hashing loss.
//!
//! For codes `b1`, `b2` and dissimilarity flag `y` (0 = same class):
//!
//! ```text
//! L = 1/2 (1 - y) |b1 - b2|^2
//!   + 1/2 y max(m - |b1 - b2|^2, 0)
//!   + alpha (| |b1| - 1 |_1 + | |b2| - 1 |_1)
//! ```

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DshLossParams {
    /// Margin for dissimilar pairs, on squared Euclidean distance.
    pub margin: f64,
    /// Weight of the quantization term pulling codes towards +-1.
    pub reg_weight: f64,
    /// L1 penalty on network weights.
    #[serde(default)]
    pub l1_weight: f64,
    /// L2 penalty on network weights.
    #[serde(default)]
    pub l2_weight: f64,
}

impl Default for DshLossParams {
    fn default() -> Self {
        Self {
            margin: 24.0,
            reg_weight: 1e-3,
            l1_weight: 0.0,
            l2_weight: 0.0,
        }
    }
}

impl DshLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        for (name, v) in [
            ("reg_weight", self.reg_weight),
            ("l1_weight", self.l1_weight),
            ("l2_weight", self.l2_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Same-class pairs have `Similar` (y = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Similar,
    Dissimilar,
}

impl PairLabel {
    pub fn y(self) -> f64 {
        match self {
            PairLabel::Similar => 0.0,
            PairLabel::Dissimilar => 1.0,
        }
    }
}

fn squared_distance(b1: &[f64], b2: &[f64]) -> f64 {
    b1.iter().zip(b2).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn quantization(b: &[f64]) -> f64 {
    b.iter().map(|v| (v.abs() - 1.0).abs()).sum()
}

pub fn dsh_loss(b1: &[f64], b2: &[f64], pair: PairLabel, lp: &DshLossParams) -> f64 {
    assert_eq!(b1.len(), b2.len(), "code length mismatch");
    let y = pair.y();
    let d = squared_distance(b1, b2);
    0.5 * (1.0 - y) * d
        + 0.5 * y * (lp.margin - d).max(0.0)
        + lp.reg_weight * (quantization(b1) + quantization(b2))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of [`dsh_loss`] w.r.t. `(b1, b2)`. At the hinge boundary and
/// at `|b_j| = 1` (or `b_j = 0`) the zero subgradient is used.
pub fn dsh_loss_grad(
    b1: &[f64],
    b2: &[f64],
    pair: PairLabel,
    lp: &DshLossParams,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(b1.len(), b2.len(), "code length mismatch");
    let y = pair.y();
    let d = squared_distance(b1, b2);
    // coefficient of (b1 - b2) in dL/db1
    let coef = (1.0 - y) - if lp.margin - d > 0.0 { y } else { 0.0 };
    let quant = |b: f64| lp.reg_weight * sign(b.abs() - 1.0) * sign(b);
    let g1 = b1
        .iter()
        .zip(b2)
        .map(|(a, b)| coef * (a - b) + quant(*a))
        .collect();
    let g2 = b1
        .iter()
        .zip(b2)
        .map(|(a, b)| -coef * (a - b) + quant(*b))
        .collect();
    (g1, g2)
}

/// All unordered index pairs `(i, j)`, `i < j`, with their similarity label.
pub fn pair_batch<L: PartialEq>(labels: &[L]) -> Result<Vec<(usize, usize, PairLabel)>> {
    if labels.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "pairing needs at least 2 samples, got {}",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len() * (labels.len() - 1) / 2);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let pair = if labels[i] == labels[j] {
                PairLabel::Similar
            } else {
                PairLabel::Dissimilar
            };
            out.push((i, j, pair));
        }
    }
    Ok(out)
}

/// Mean pairwise loss over a batch of codes and its gradient w.r.t. the codes.
pub fn mean_pair_loss(codes: &Matrix, labels: &[usize], lp: &DshLossParams) -> Result<(f64, Matrix)> {
    let pairs = pair_batch(labels)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(codes.rows(), codes.cols());
    for (i, j, pair) in pairs {
        let (b1, b2) = (codes.row(i), codes.row(j));
        total += dsh_loss(b1, b2, pair, lp);
        let (g1, g2) = dsh_loss_grad(b1, b2, pair, lp);
        for (d, g) in grad.row_mut(i).iter_mut().zip(&g1) {
            *d += scale * g;
        }
        for (d, g) in grad.row_mut(j).iter_mut().zip(&g2) {
            *d += scale * g;
        }
    }
    Ok((total * scale, grad))
}

/// Training objective of one minibatch (train-mode batch norm) and its
/// gradient w.r.t. every trainable parameter:
/// mean pairwise loss `+ l1 * sum|W| + l2 * sum W^2`.
pub fn batch_objective(
    params: &MlpParams,
    x: &Matrix,
    labels: &[usize],
    lp: &DshLossParams,
) -> Result<(f64, Gradients, super::mlp::Tape)> {
    if x.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: labels.len(),
        });
    }
    let tape = params.forward_train(x)?;
    let (pair_loss, d_codes) = mean_pair_loss(tape.output(), labels, lp)?;
    let (l1, l2) = params.weight_norms();
    let loss = pair_loss + lp.l1_weight * l1 + lp.l2_weight * l2;
    let mut grads = params.backward(&tape, &d_codes);
    grads.add_weight_penalty(params, lp.l1_weight, lp.l2_weight);
    Ok((loss, grads, tape))
}
