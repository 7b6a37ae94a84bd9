//! Retrieval and evaluation checked against brute-force re-implementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cosfire_hash::eval::{class_distance_matrix, map_at_r};
use cosfire_hash::hashnet::Matrix;
use cosfire_hash::retrieval::{
    binarize_rows, mean_average_precision, threshold_grid, threshold_sweep, HashCode, RetrievalIndex,
};

fn bits_of(c: &HashCode) -> Vec<bool> {
    c.to_bools()
}

fn naive_distance(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Full ranking by (distance, position), then AP@k from its definition.
fn oracle_ap(ref_bits: &[Vec<bool>], ref_labels: &[usize], q: &[bool], q_label: usize, k: usize) -> Option<f64> {
    let mut order: Vec<(usize, usize)> = ref_bits.iter().enumerate().map(|(i, b)| (naive_distance(b, q), i)).collect();
    order.sort();
    let relevant = ref_labels.iter().filter(|&&l| l == q_label).count();
    if relevant == 0 {
        return None;
    }
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (rank, &(_, i)) in order.iter().take(k).enumerate() {
        if ref_labels[i] == q_label {
            hits += 1.0;
            sum += hits / (rank + 1) as f64;
        }
    }
    Some(sum / relevant.min(k) as f64)
}

fn oracle_map(ref_bits: &[Vec<bool>], ref_labels: &[usize], qs: &[Vec<bool>], q_labels: &[usize], k: usize) -> f64 {
    let aps: Vec<f64> = qs
        .iter()
        .zip(q_labels)
        .filter_map(|(q, &l)| oracle_ap(ref_bits, ref_labels, q, l, k))
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

fn random_acts(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-0.999..0.999)).collect()).unwrap()
}

#[test]
fn map_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let bits = 12;
        let ref_acts = random_acts(40, bits, &mut rng);
        let ref_labels: Vec<usize> = (0..40).map(|_| rng.gen_range(0..3)).collect();
        let q_acts = random_acts(10, bits, &mut rng);
        let q_labels: Vec<usize> = (0..10).map(|_| rng.gen_range(0..3)).collect();
        let index = RetrievalIndex::from_parts(
            bits,
            binarize_rows(&ref_acts, 0.0).unwrap(),
            ref_labels.clone(),
            (0..40).collect(),
        )
        .unwrap();
        let queries = binarize_rows(&q_acts, 0.0).unwrap();
        let got = mean_average_precision(&index, &queries, &q_labels, 7).unwrap();
        let ref_bits: Vec<Vec<bool>> = index.codes().iter().map(bits_of).collect();
        let q_bits: Vec<Vec<bool>> = queries.iter().map(bits_of).collect();
        let want = oracle_map(&ref_bits, &ref_labels, &q_bits, &q_labels, 7);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn sweep_curve_matches_per_threshold_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let ref_acts = random_acts(30, 8, &mut rng);
    let ref_labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let val_acts = random_acts(12, 8, &mut rng);
    let val_labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let sweep = threshold_sweep(&val_acts, &val_labels, &ref_acts, &ref_labels, 5).unwrap();
    assert_eq!(sweep.curve.len(), 21);
    for (&(t, m), want_t) in sweep.curve.iter().zip(threshold_grid()) {
        assert_eq!(t, want_t);
        let bin = |acts: &Matrix| -> Vec<Vec<bool>> {
            (0..acts.rows()).map(|r| acts.row(r).iter().map(|&a| a > t).collect()).collect()
        };
        let want = oracle_map(&bin(&ref_acts), &ref_labels, &bin(&val_acts), &val_labels, 5);
        assert!((m - want).abs() < 1e-12, "threshold {t}: {m} vs {want}");
    }
    let best = sweep.curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(sweep.best_map, best);
    let first_best = sweep.curve.iter().find(|c| c.1 == best).unwrap().0;
    assert_eq!(sweep.best_threshold, first_best);
}

#[test]
fn map_at_r_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let ref_acts = random_acts(24, 10, &mut rng);
    let ref_labels: Vec<usize> = (0..24).map(|_| rng.gen_range(0..4)).collect();
    let q_acts = random_acts(16, 10, &mut rng);
    let q_labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
    let index =
        RetrievalIndex::from_parts(10, binarize_rows(&ref_acts, 0.0).unwrap(), ref_labels.clone(), (0..24).collect())
            .unwrap();
    let queries = binarize_rows(&q_acts, 0.0).unwrap();
    let got = map_at_r(&index, &queries, &q_labels).unwrap();
    let ref_bits: Vec<Vec<bool>> = index.codes().iter().map(bits_of).collect();
    let mut per_class = Vec::new();
    for class in 0..4 {
        let r = ref_labels.iter().filter(|&&l| l == class).count();
        if r == 0 {
            continue;
        }
        let aps: Vec<f64> = queries
            .iter()
            .zip(&q_labels)
            .filter(|(_, &l)| l == class)
            .map(|(q, _)| oracle_ap(&ref_bits, &ref_labels, &bits_of(q), class, r).unwrap())
            .collect();
        per_class.push(aps.iter().sum::<f64>() / aps.len() as f64);
    }
    let want = per_class.iter().sum::<f64>() / per_class.len() as f64;
    assert_eq!(got.per_class.len(), per_class.len());
    assert!((got.average - want).abs() < 1e-12);
}

#[test]
fn distance_matrix_matches_exhaustive_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let acts = random_acts(20, 16, &mut rng);
    let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let codes = binarize_rows(&acts, 0.0).unwrap();
    let m = class_distance_matrix(&codes, &labels, 4).unwrap();
    let bits: Vec<Vec<bool>> = codes.iter().map(bits_of).collect();
    for a in 0..4 {
        for b in 0..4 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in 0..20 {
                for j in 0..20 {
                    if i == j || labels[i] != a || labels[j] != b {
                        continue;
                    }
                    sum += naive_distance(&bits[i], &bits[j]) as f64;
                    n += 1.0;
                }
            }
            assert!((m.get(a, b) - sum / n).abs() < 1e-12);
            assert_eq!(m.get(a, b), m.get(b, a));
            assert!(m.get(a, b) <= 16.0);
        }
    }
}
