//! Binary hash codes and exact Hamming-distance retrieval.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{map_at_k, QueryResult};
use crate::hashnet::Matrix;

/// `k` bits packed into 64-bit words, bit `j` at word `j / 64`, position `j % 64`.
/// Bits beyond `k` in the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    words: Vec<u64>,
    bits: usize,
}

impl HashCode {
    pub fn zeros(bits: usize) -> Self {
        Self {
            words: vec![0; bits.div_ceil(64)],
            bits,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            if b {
                code.words[j / 64] |= 1 << (j % 64);
            }
        }
        code
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.bits, "bit {j} out of range for a {}-bit code", self.bits);
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.bits).map(|j| self.bit(j)).collect()
    }

    pub fn complement(&self) -> Self {
        let mut out = Self {
            words: self.words.iter().map(|w| !w).collect(),
            bits: self.bits,
        };
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.bits % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// `ceil(k / 8)` bytes, bit `j` in byte `j / 8` at position `j % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.bits.div_ceil(8);
        (0..n)
            .map(|i| (self.words[i / 8] >> ((i % 8) * 8)) as u8)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], bits: usize) -> Result<Self> {
        if bytes.len() != bits.div_ceil(8) {
            return Err(Error::DimensionMismatch {
                expected: bits.div_ceil(8),
                found: bytes.len(),
            });
        }
        let mut code = Self::zeros(bits);
        for (i, &b) in bytes.iter().enumerate() {
            code.words[i / 8] |= (b as u64) << ((i % 8) * 8);
        }
        let before = code.words.clone();
        code.clear_tail();
        if code.words != before {
            return Err(Error::Corrupt("nonzero padding bits in code".into()));
        }
        Ok(code)
    }
}

/// `bit_j = activation_j > threshold`.
pub fn binarize(activations: &[f64], threshold: f64) -> Result<HashCode> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in [-1, 1], got {threshold}"
        )));
    }
    let mut code = HashCode::zeros(activations.len());
    for (j, &a) in activations.iter().enumerate() {
        if a > threshold {
            code.words[j / 64] |= 1 << (j % 64);
        }
    }
    Ok(code)
}

/// Binarizes every row of an activation matrix.
pub fn binarize_rows(acts: &Matrix, threshold: f64) -> Result<Vec<HashCode>> {
    (0..acts.rows())
        .map(|r| binarize(acts.row(r), threshold))
        .collect()
}

pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::DimensionMismatch {
            expected: a.bits,
            found: b.bits,
        });
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &HashCode, b: &HashCode) -> u32 {
    a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u32,
    pub label: usize,
    pub distance: u32,
}

/// Reference database of codes with labels and stable record ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    bits: usize,
    codes: Vec<HashCode>,
    labels: Vec<usize>,
    ids: Vec<u32>,
}

impl RetrievalIndex {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            codes: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn from_parts(bits: usize, codes: Vec<HashCode>, labels: Vec<usize>, ids: Vec<u32>) -> Result<Self> {
        let mut idx = Self::new(bits);
        if labels.len() != codes.len() || ids.len() != codes.len() {
            return Err(Error::DimensionMismatch {
                expected: codes.len(),
                found: labels.len().min(ids.len()),
            });
        }
        for ((c, l), i) in codes.into_iter().zip(labels).zip(ids) {
            idx.push(i, l, c)?;
        }
        Ok(idx)
    }

    pub fn push(&mut self, id: u32, label: usize, code: HashCode) -> Result<()> {
        if code.bits != self.bits {
            return Err(Error::DimensionMismatch {
                expected: self.bits,
                found: code.bits,
            });
        }
        self.codes.push(code);
        self.labels.push(label);
        self.ids.push(id);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[HashCode] {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Number of records carrying `label`.
    pub fn label_count(&self, label: usize) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Exact linear scan: ascending distance, ties in insertion order.
    pub fn query(&self, q: &HashCode, top_n: usize) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::Empty("retrieval index".into()));
        }
        if q.bits != self.bits {
            return Err(Error::DimensionMismatch {
                expected: self.bits,
                found: q.bits,
            });
        }
        if top_n == 0 {
            return Err(Error::InvalidParameter("top_n must be >= 1".into()));
        }
        // distances are bounded by k, so a bucket pass is a stable sort
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); self.bits + 1];
        for (pos, code) in self.codes.iter().enumerate() {
            buckets[hamming_unchecked(q, code) as usize].push(pos as u32);
        }
        let take = top_n.min(self.len());
        let mut hits = Vec::with_capacity(take);
        'outer: for (d, bucket) in buckets.iter().enumerate() {
            for &pos in bucket {
                if hits.len() == take {
                    break 'outer;
                }
                let pos = pos as usize;
                hits.push(Hit {
                    id: self.ids[pos],
                    label: self.labels[pos],
                    distance: d as u32,
                });
            }
        }
        Ok(hits)
    }

    /// Writes the codes file and its JSON label sidecar (`<path>.json`).
    pub fn save(&self, path: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))?;
        let sidecar = CodesSidecar {
            bits: self.bits,
            count: self.len(),
            labels: class_names.to_vec(),
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(sp, e))
    }

    /// Returns the index and the label names from its sidecar (empty if absent).
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let index = Self::decode(&bytes)?;
        let sp = sidecar_path(path);
        let names = match fs::read_to_string(&sp) {
            Ok(text) => serde_json::from_str::<CodesSidecar>(&text)?.labels,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(sp, e)),
        };
        Ok((index, names))
    }

    /// `"CODE" | u32 k | u32 count | (u32 id, u8 label, ceil(k/8) bytes)*`, little-endian.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let nbytes = self.bits.div_ceil(8);
        let mut out = Vec::with_capacity(12 + self.len() * (5 + nbytes));
        out.extend_from_slice(CODES_MAGIC);
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for ((code, &label), &id) in self.codes.iter().zip(&self.labels).zip(&self.ids) {
            let label = u8::try_from(label).map_err(|_| {
                Error::InvalidParameter(format!("label index {label} does not fit in a byte"))
            })?;
            out.extend_from_slice(&id.to_le_bytes());
            out.push(label);
            out.extend_from_slice(&code.to_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Corrupt("codes file shorter than its header".into()));
        }
        if &bytes[..4] != CODES_MAGIC {
            return Err(Error::Version("not a codes file (bad magic)".into()));
        }
        let bits = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bits == 0 {
            return Err(Error::Corrupt("zero code length".into()));
        }
        let nbytes = bits.div_ceil(8);
        let record = 5 + nbytes;
        let body = &bytes[12..];
        if body.len() != count * record {
            return Err(Error::Corrupt(format!(
                "expected {} record bytes, found {}",
                count * record,
                body.len()
            )));
        }
        let mut idx = Self::new(bits);
        for rec in body.chunks_exact(record) {
            let id = u32::from_le_bytes(rec[..4].try_into().unwrap());
            let label = rec[4] as usize;
            idx.push(id, label, HashCode::from_bytes(&rec[5..], bits)?)?;
        }
        Ok(idx)
    }
}

pub const CODES_MAGIC: &[u8; 4] = b"CODE";

#[derive(Debug, Serialize, Deserialize)]
struct CodesSidecar {
    bits: usize,
    count: usize,
    labels: Vec<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Thresholds `-1.0, -0.9, ..., 1.0`.
pub fn threshold_grid() -> Vec<f64> {
    (-10..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub best_threshold: f64,
    pub best_map: f64,
    /// `(threshold, mAP)` for every grid value.
    pub curve: Vec<(f64, f64)>,
}

/// mAP@`k_eval` of validation queries against a reference index built at each threshold.
pub fn threshold_sweep(
    valid_acts: &Matrix,
    valid_labels: &[usize],
    ref_acts: &Matrix,
    ref_labels: &[usize],
    k_eval: usize,
) -> Result<ThresholdSweep> {
    threshold_sweep_over(valid_acts, valid_labels, ref_acts, ref_labels, k_eval, &threshold_grid())
}

pub fn threshold_sweep_over(
    valid_acts: &Matrix,
    valid_labels: &[usize],
    ref_acts: &Matrix,
    ref_labels: &[usize],
    k_eval: usize,
    thresholds: &[f64],
) -> Result<ThresholdSweep> {
    if valid_acts.rows() != valid_labels.len() || ref_acts.rows() != ref_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: valid_acts.rows(),
            found: valid_labels.len(),
        });
    }
    if valid_acts.cols() != ref_acts.cols() {
        return Err(Error::DimensionMismatch {
            expected: ref_acts.cols(),
            found: valid_acts.cols(),
        });
    }
    for (name, labels) in [("validation", valid_labels), ("reference", ref_labels)] {
        let first = labels.first().ok_or_else(|| Error::Empty(format!("{name} set")))?;
        if labels.iter().all(|l| l == first) {
            return Err(Error::DegenerateLabels(format!(
                "{name} set contains a single class"
            )));
        }
    }
    if thresholds.is_empty() {
        return Err(Error::Empty("threshold grid".into()));
    }
    let bits = ref_acts.cols();
    let ids: Vec<u32> = (0..ref_labels.len() as u32).collect();
    let mut curve = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let index = RetrievalIndex::from_parts(bits, binarize_rows(ref_acts, t)?, ref_labels.to_vec(), ids.clone())?;
        let queries = binarize_rows(valid_acts, t)?;
        curve.push((t, mean_average_precision(&index, &queries, valid_labels, k_eval)?));
    }
    let mut best = 0;
    for (i, &(_, m)) in curve.iter().enumerate() {
        if m > curve[best].1 {
            best = i;
        }
    }
    Ok(ThresholdSweep {
        best_threshold: curve[best].0,
        best_map: curve[best].1,
        curve,
    })
}

/// Runs every query against `index` and returns the per-query results at cutoff `k`.
pub fn query_results(
    index: &RetrievalIndex,
    queries: &[HashCode],
    labels: &[usize],
    k: usize,
) -> Result<Vec<QueryResult>> {
    if queries.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: labels.len(),
        });
    }
    queries
        .iter()
        .zip(labels)
        .map(|(q, &label)| {
            let hits = index.query(q, k)?;
            Ok(QueryResult::from_hits(&hits, label, index.label_count(label), k))
        })
        .collect()
}

/// mAP@k of `queries` against `index`.
pub fn mean_average_precision(
    index: &RetrievalIndex,
    queries: &[HashCode],
    labels: &[usize],
    k: usize,
) -> Result<f64> {
    map_at_k(&query_results(index, queries, labels, k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_code(bits: usize, rng: &mut ChaCha8Rng) -> HashCode {
        HashCode::from_bools(&(0..bits).map(|_| rng.gen()).collect::<Vec<bool>>())
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.95, -0.95], 0.9).unwrap().to_bools(), vec![true, false]);
        let acts = [0.3, -0.999, 0.999, 0.0];
        assert!(binarize(&acts, -1.0).unwrap().to_bools().iter().all(|&b| b));
        assert!(binarize(&acts, 1.0).unwrap().to_bools().iter().all(|&b| !b));
        assert!(binarize(&acts, 1.5).is_err());
        // strict inequality at the boundary
        assert!(!binarize(&[0.5], 0.5).unwrap().bit(0));
    }

    #[test]
    fn hamming_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_code(72, &mut rng);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 72);
        let b = random_code(72, &mut rng);
        let naive = (0..72).filter(|&j| a.bit(j) != b.bit(j)).count() as u32;
        assert_eq!(hamming(&a, &b).unwrap(), naive);
        assert!(hamming(&a, &HashCode::zeros(16)).is_err());
    }

    #[test]
    fn complement_keeps_tail_clear() {
        let c = HashCode::zeros(70).complement();
        assert_eq!(c.words()[1], (1 << 6) - 1);
    }

    #[test]
    fn byte_layout_is_little_endian_bit_order() {
        let mut bits = vec![false; 12];
        bits[0] = true;
        bits[9] = true;
        let c = HashCode::from_bools(&bits);
        assert_eq!(c.to_bytes(), vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(HashCode::from_bytes(&c.to_bytes(), 12).unwrap(), c);
        assert!(HashCode::from_bytes(&[0, 0b0001_0000], 12).is_err());
    }

    #[test]
    fn query_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let codes: Vec<HashCode> = (0..20).map(|_| random_code(16, &mut rng)).collect();
        let idx = RetrievalIndex::from_parts(
            16,
            codes.clone(),
            (0..20).map(|i| i % 3).collect(),
            (100..120).collect(),
        )
        .unwrap();
        let hits = idx.query(&codes[7], 1).unwrap();
        assert_eq!(hits, vec![Hit { id: 107, label: 7 % 3, distance: 0 }]);
        assert_eq!(idx.query(&codes[0], 50).unwrap().len(), 20);
        assert!(RetrievalIndex::new(16).query(&codes[0], 1).is_err());
        assert!(idx.query(&HashCode::zeros(8), 1).is_err());
    }

    #[test]
    fn ties_follow_insertion_order() {
        let c = HashCode::from_bools(&[true, false]);
        let idx = RetrievalIndex::from_parts(2, vec![c.clone(); 4], vec![0, 1, 0, 1], vec![9, 3, 7, 1]).unwrap();
        let ids: Vec<u32> = idx.query(&c, 4).unwrap().iter().map(|h| h.id).collect();
        assert_eq!(ids, vec![9, 3, 7, 1]);
    }

    #[test]
    fn codes_file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let idx = RetrievalIndex::from_parts(
            72,
            (0..5).map(|_| random_code(72, &mut rng)).collect(),
            vec![0, 1, 2, 3, 0],
            vec![5, 6, 7, 8, 9],
        )
        .unwrap();
        let bytes = idx.encode().unwrap();
        assert_eq!(bytes.len(), 12 + 5 * (5 + 9));
        assert_eq!(&bytes[..4], b"CODE");
        assert_eq!(RetrievalIndex::decode(&bytes).unwrap(), idx);
        assert!(matches!(RetrievalIndex::decode(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RetrievalIndex::decode(&bad), Err(Error::Version(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.codes");
        let names: Vec<String> = ["Bent", "Compact", "FRI", "FRII"].iter().map(|s| s.to_string()).collect();
        idx.save(&path, &names).unwrap();
        let (back, back_names) = RetrievalIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back_names, names);
    }

    #[test]
    fn sweep_grid_has_21_exact_values() {
        let g = threshold_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[19], 0.9);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn sweep_on_saturated_separable_codes_is_flat() {
        // class 0 -> +0.995 on the first half, class 1 -> the other half
        let mk = |label: usize| -> Vec<f64> {
            (0..8).map(|j| if (j < 4) == (label == 0) { 0.995 } else { -0.995 }).collect()
        };
        let ref_labels = vec![0, 1, 0, 1, 0, 1];
        let valid_labels = vec![1, 0, 1];
        let ref_acts = Matrix::from_rows(&ref_labels.iter().map(|&l| mk(l)).collect::<Vec<_>>()).unwrap();
        let valid_acts = Matrix::from_rows(&valid_labels.iter().map(|&l| mk(l)).collect::<Vec<_>>()).unwrap();
        let s = threshold_sweep(&valid_acts, &valid_labels, &ref_acts, &ref_labels, 3).unwrap();
        for &(t, m) in &s.curve {
            if t > -0.99 && t < 0.99 {
                assert_eq!(m, 1.0);
            }
        }
        assert_eq!(s.best_map, 1.0);
        assert_eq!(s.best_threshold, -0.9);
        assert!(matches!(
            threshold_sweep(&valid_acts, &[0, 0, 0], &ref_acts, &ref_labels, 3),
            Err(Error::DegenerateLabels(_))
        ));
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(seed in any::<u64>(), bits in 1usize..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_code(bits, &mut rng), random_code(bits, &mut rng), random_code(bits, &mut rng));
            let ab = hamming(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
            prop_assert!(ab as usize <= bits);
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        }

        #[test]
        fn raising_threshold_never_sets_bits(
            acts in prop::collection::vec(-0.999f64..0.999, 1..100),
            t1 in -1.0f64..1.0,
            dt in 0.0f64..1.0,
        ) {
            let t2 = (t1 + dt).min(1.0);
            let lo = binarize(&acts, t1).unwrap();
            let hi = binarize(&acts, t2).unwrap();
            for j in 0..acts.len() {
                prop_assert!(!hi.bit(j) || lo.bit(j));
            }
        }

        #[test]
        fn query_is_permutation_invariant_up_to_ties(seed in any::<u64>(), n in 1usize..60) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let codes: Vec<HashCode> = (0..n).map(|_| random_code(8, &mut rng)).collect();
            let ids: Vec<u32> = (0..n as u32).collect();
            let idx = RetrievalIndex::from_parts(8, codes.clone(), vec![0; n], ids.clone()).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let shuffled = RetrievalIndex::from_parts(
                8,
                order.iter().map(|&i| codes[i].clone()).collect(),
                vec![0; n],
                order.iter().map(|&i| ids[i]).collect(),
            ).unwrap();
            let q = random_code(8, &mut rng);
            let a = idx.query(&q, n).unwrap();
            let b = shuffled.query(&q, n).unwrap();
            let dist = |h: &[Hit]| h.iter().map(|x| x.distance).collect::<Vec<_>>();
            prop_assert_eq!(dist(&a), dist(&b));
            // within one distance the same set of ids, ordered by insertion position
            let mut sa: Vec<(u32, u32)> = a.iter().map(|h| (h.distance, h.id)).collect();
            let mut sb: Vec<(u32, u32)> = b.iter().map(|h| (h.distance, h.id)).collect();
            sa.sort_unstable();
            sb.sort_unstable();
            prop_assert_eq!(sa, sb);
        }
    }
}
