//! Deterministic minibatch gradient descent on the pairwise hashing loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_objective, DshLossParams};
use super::mlp::{MlpParams, REFERENCE_HIDDEN};
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::retrieval::{binarize_rows, mean_average_precision, RetrievalIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Cutoff of the validation mAP used for model selection.
    pub k_eval: usize,
    /// Binarization threshold used for validation during training.
    pub valid_threshold: f64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            patience: 20,
            k_eval: 100,
            valid_threshold: 0.0,
            hidden: REFERENCE_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch size must be >= 2".into()));
        }
        if self.k_eval == 0 {
            return Err(Error::InvalidParameter("k_eval must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.valid_threshold) {
            return Err(Error::InvalidParameter("valid_threshold must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch, measured before each update.
    pub train_loss: f64,
    pub valid_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean minibatch objective of the initial parameters over the first epoch's batches.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based; 0 = initial parameters).
    pub best_epoch: usize,
    pub best_valid_map: f64,
}

/// Splits a permutation into batches of `size`; a trailing singleton joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// mAP@k of `valid` queries against `reference`, both binarized at `threshold`.
pub fn retrieval_map(
    params: &MlpParams,
    reference: &DescriptorSet,
    valid: &DescriptorSet,
    threshold: f64,
    k: usize,
) -> Result<f64> {
    let ref_codes = binarize_rows(&params.infer(&reference.features)?, threshold)?;
    let index = RetrievalIndex::from_parts(params.bits(), ref_codes, reference.labels.clone(), reference.ids.clone())?;
    let queries = binarize_rows(&params.infer(&valid.features)?, threshold)?;
    mean_average_precision(&index, &queries, &valid.labels, k)
}

/// Trains a `dim -> hidden... -> bits` network and returns the parameters of
/// the epoch with the best validation mAP (earliest on ties).
pub fn train(
    train_set: &DescriptorSet,
    valid_set: &DescriptorSet,
    bits: usize,
    cfg: &TrainConfig,
    lp: &DshLossParams,
) -> Result<(MlpParams, TrainHistory)> {
    cfg.validate()?;
    lp.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Empty("training split needs at least 2 descriptors".into()));
    }
    if valid_set.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    if valid_set.dim() != train_set.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_set.dim(),
            found: valid_set.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init_uniform(train_set.dim(), &cfg.hidden, bits, &mut rng)?;

    let n = train_set.len();
    let identity: Vec<usize> = (0..n).collect();
    let mut initial = 0.0;
    let first = batches(&identity, cfg.batch_size);
    for b in &first {
        let x = train_set.features.select_rows(b);
        let labels: Vec<usize> = b.iter().map(|&i| train_set.labels[i]).collect();
        initial += batch_objective(&params, &x, &labels, lp)?.0;
    }
    let initial_loss = initial / first.len() as f64;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }

    let mut best = params.clone();
    let mut best_map = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order = identity;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let bs = batches(&order, cfg.batch_size);
        for b in &bs {
            let x = train_set.features.select_rows(b);
            let labels: Vec<usize> = b.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads, tape) = batch_objective(&params, &x, &labels, lp)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            params.update_running_stats(&tape);
            params.apply_gradients(&grads, cfg.learning_rate);
        }
        let train_loss = total / bs.len() as f64;
        let valid_map = retrieval_map(&params, train_set, valid_set, cfg.valid_threshold, cfg.k_eval)?;
        log::debug!("epoch {epoch}: loss {train_loss:.6} valid mAP@{} {valid_map:.4}", cfg.k_eval);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_map,
        });
        if valid_map > best_map {
            best_map = valid_map;
            best_epoch = epoch;
            best = params.clone();
        } else if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    if epochs.is_empty() {
        best_map = retrieval_map(&params, train_set, valid_set, cfg.valid_threshold, cfg.k_eval)?;
    }
    Ok((
        best,
        TrainHistory {
            initial_loss,
            epochs,
            best_epoch,
            best_valid_map: best_map,
        },
    ))
}
