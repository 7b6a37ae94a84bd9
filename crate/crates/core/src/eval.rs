//! Retrieval quality metrics, class separability and FLOPs accounting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cosfire::FilterBank;
use crate::error::{Error, Result};
use crate::retrieval::{hamming, HashCode, Hit, RetrievalIndex};

/// Relevance flags of one ranked query, plus the number of relevant references.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub relevance: Vec<bool>,
    pub relevant_total: usize,
    pub k: usize,
}

impl QueryResult {
    pub fn new(relevance: Vec<bool>, relevant_total: usize, k: usize) -> Self {
        Self {
            relevance,
            relevant_total,
            k,
        }
    }

    pub fn from_hits(hits: &[Hit], query_label: usize, relevant_total: usize, k: usize) -> Self {
        Self {
            relevance: hits.iter().take(k).map(|h| h.label == query_label).collect(),
            relevant_total,
            k,
        }
    }
}

/// `AP@k = 1/min(R, k) * sum_i Precision(i) * Rel(i)` over the first `k` ranks.
pub fn ap_at_k(qr: &QueryResult) -> Result<f64> {
    if qr.relevant_total == 0 {
        return Err(Error::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in qr.relevance.iter().take(qr.k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / qr.relevant_total.min(qr.k) as f64)
}

/// Mean AP@k; queries without relevant references are skipped with a warning.
pub fn map_at_k(results: &[QueryResult]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for qr in results {
        match ap_at_k(qr) {
            Ok(ap) => {
                total += ap;
                n += 1;
            }
            Err(Error::NoRelevant) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} queries have no relevant reference items and were excluded");
    }
    if n == 0 {
        return Err(Error::Empty("no query with relevant reference items".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub label: usize,
    /// Cutoff used for this class (its reference count).
    pub r: usize,
    pub queries: usize,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapAtR {
    pub per_class: Vec<ClassMap>,
    /// Unweighted mean over classes.
    pub average: f64,
}

/// mAP with the cutoff of every query set to the reference count of its class.
pub fn map_at_r(index: &RetrievalIndex, queries: &[HashCode], labels: &[usize]) -> Result<MapAtR> {
    if queries.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: labels.len(),
        });
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut per_class = Vec::new();
    for label in classes {
        let r = index.label_count(label);
        if r == 0 {
            log::warn!("class {label} has no reference items; its queries are excluded");
            continue;
        }
        let mut results = Vec::new();
        for (q, _) in queries.iter().zip(labels).filter(|(_, &l)| l == label) {
            let hits = index.query(q, r)?;
            results.push(QueryResult::from_hits(&hits, label, r, r));
        }
        per_class.push(ClassMap {
            label,
            r,
            queries: results.len(),
            map: map_at_k(&results)?,
        });
    }
    if per_class.is_empty() {
        return Err(Error::Empty("no query class has reference items".into()));
    }
    let average = per_class.iter().map(|c| c.map).sum::<f64>() / per_class.len() as f64;
    Ok(MapAtR { per_class, average })
}

/// Mean Hamming distance between classes, with the number of pairs per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistanceMatrix {
    pub classes: usize,
    /// Row-major `classes x classes`.
    pub mean: Vec<f64>,
    pub pairs: Vec<u64>,
}

impl ClassDistanceMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mean[row * self.classes + col]
    }

    pub fn pair_count(&self, row: usize, col: usize) -> u64 {
        self.pairs[row * self.classes + col]
    }
}

fn check_labels(codes: &[HashCode], labels: &[usize], classes: usize) -> Result<()> {
    if codes.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: codes.len(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidParameter(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Within one set: diagonal cells average over distinct unordered pairs of
/// the class, off-diagonal cells over all cross pairs.
pub fn class_distance_matrix(codes: &[HashCode], labels: &[usize], classes: usize) -> Result<ClassDistanceMatrix> {
    check_labels(codes, labels, classes)?;
    let mut sum = vec![0u64; classes * classes];
    let mut pairs = vec![0u64; classes * classes];
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d = hamming(&codes[i], &codes[j])? as u64;
            let (a, b) = (labels[i], labels[j]);
            sum[a * classes + b] += d;
            pairs[a * classes + b] += 1;
            if a != b {
                sum[b * classes + a] += d;
                pairs[b * classes + a] += 1;
            }
        }
    }
    for c in 0..classes {
        if pairs[c * classes + c] == 0 {
            return Err(Error::InvalidParameter(format!(
                "class {c} needs at least 2 members for its diagonal cell"
            )));
        }
    }
    finish_matrix(classes, sum, pairs)
}

/// Query set against reference set: every cell averages over the full bipartite pair set.
pub fn class_distance_matrix_cross(
    query_codes: &[HashCode],
    query_labels: &[usize],
    ref_codes: &[HashCode],
    ref_labels: &[usize],
    classes: usize,
) -> Result<ClassDistanceMatrix> {
    check_labels(query_codes, query_labels, classes)?;
    check_labels(ref_codes, ref_labels, classes)?;
    let mut sum = vec![0u64; classes * classes];
    let mut pairs = vec![0u64; classes * classes];
    for (q, &a) in query_codes.iter().zip(query_labels) {
        for (r, &b) in ref_codes.iter().zip(ref_labels) {
            sum[a * classes + b] += hamming(q, r)? as u64;
            pairs[a * classes + b] += 1;
        }
    }
    if let Some(c) = (0..classes).find(|&c| pairs[c * classes + c] == 0) {
        return Err(Error::InvalidParameter(format!(
            "class {c} is missing from the query or reference set"
        )));
    }
    finish_matrix(classes, sum, pairs)
}

fn finish_matrix(classes: usize, sum: Vec<u64>, pairs: Vec<u64>) -> Result<ClassDistanceMatrix> {
    let mean = sum
        .iter()
        .zip(&pairs)
        .map(|(&s, &p)| if p == 0 { f64::NAN } else { s as f64 / p as f64 })
        .collect();
    Ok(ClassDistanceMatrix {
        classes,
        mean,
        pairs,
    })
}

/// Mean diagonal cell divided by mean off-diagonal cell. Lower is better.
pub fn separability_ratio(m: &ClassDistanceMatrix) -> Result<f64> {
    let n = m.classes;
    if n < 2 {
        return Err(Error::InvalidParameter("separability needs at least 2 classes".into()));
    }
    let diag: Vec<f64> = (0..n).map(|c| m.get(c, c)).collect();
    let off: Vec<f64> = (0..n)
        .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
        .map(|(r, c)| m.get(r, c))
        .filter(|v| !v.is_nan())
        .collect();
    if off.is_empty() {
        return Err(Error::InvalidParameter("no inter-class pairs".into()));
    }
    let intra = diag.iter().sum::<f64>() / diag.len() as f64;
    let inter = off.iter().sum::<f64>() / off.len() as f64;
    if inter == 0.0 {
        return Err(Error::InvalidParameter("mean inter-class distance is zero".into()));
    }
    Ok(intra / inter)
}

/// Reference descriptor-stage cost of the 372-filter bank reported for the
/// published configuration, carried through unchanged.
pub const REFERENCE_DESCRIPTOR_FLOPS: u64 = 1_139_692_788;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub batch_norm: bool,
    pub tanh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub component: String,
    pub formula: String,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub rows: Vec<FlopsRow>,
    pub total: u64,
}

/// Layer specs of the hashing network for the given widths (input first).
/// Hidden layers carry batch norm; every layer ends in tanh.
pub fn hashing_layers(sizes: &[usize]) -> Vec<LayerSpec> {
    let last = sizes.len().saturating_sub(2);
    sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            inputs: w[0],
            outputs: w[1],
            batch_norm: i < last,
            tanh: true,
        })
        .collect()
}

/// Inference FLOPs: linear `2mn`, batch norm `4n`, tanh `n`.
pub fn mlp_flops(layers: &[LayerSpec]) -> FlopsBreakdown {
    let mut rows = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let (m, n) = (l.inputs as u64, l.outputs as u64);
        let k = i + 1;
        rows.push(FlopsRow {
            component: format!("Linear Layer {k}: m = {m}, n = {n}"),
            formula: "2mn".into(),
            flops: 2 * m * n,
        });
        if l.batch_norm {
            rows.push(FlopsRow {
                component: format!("Batch Normalization {k}: n = {n}"),
                formula: "4n".into(),
                flops: 4 * n,
            });
        }
        if l.tanh {
            rows.push(FlopsRow {
                component: format!("Tanh Activation {k}: n = {n}"),
                formula: "n".into(),
                flops: n,
            });
        }
    }
    let total = rows.iter().map(|r| r.flops).sum();
    FlopsBreakdown { rows, total }
}

/// Analytic per-image count for computing a descriptor with `bank` on a
/// `width x height` image, assuming shared DoG and blurred maps:
///
/// * each distinct DoG sigma: two separable Gaussian passes (2 mult-adds per
///   tap per direction) plus a subtraction, rectification of both
///   polarities and a threshold compare;
/// * each distinct (sigma, polarity, blur) map: one separable blur;
/// * each filter and orientation: `n - 1` products per pixel, a max
///   comparison per pixel, and a final root.
pub fn descriptor_flops(bank: &FilterBank, width: usize, height: usize) -> u64 {
    use std::collections::HashSet;
    let px = (width * height) as u64;
    let hp = bank.hyperparams();
    let kernel_len = |s: f64| 2 * (3.0 * s).ceil() as u64 + 1;
    let mut sigmas: HashSet<u64> = HashSet::new();
    let mut blurs: HashSet<(u64, crate::dog::Polarity, u64)> = HashSet::new();
    let mut total = 0u64;
    for f in bank.filters() {
        for t in f.tuples() {
            sigmas.insert(t.sigma.to_bits());
            blurs.insert((t.sigma.to_bits(), t.polarity, hp.blur_sigma(t.rho).to_bits()));
        }
        let per_orientation = px * (f.len() as u64 - 1) + px;
        total += bank.orientations().len() as u64 * per_orientation + 1;
    }
    for s in sigmas {
        let s = f64::from_bits(s);
        let conv = |sig: f64| 2 * 2 * kernel_len(sig) * px;
        total += conv(s) + conv(s / 2.0) + px + 2 * px + 2 * px;
    }
    for (_, _, b) in blurs {
        total += 2 * 2 * kernel_len(f64::from_bits(b)) * px;
    }
    total
}
