//! Calibration metrics against brute-force oracles and their invariants.

use dpsgld::calibration::{
    accuracy, ace, auc_macro_ovr, confidence_histogram, ece, reliability_curve, sce, BinStats, PredictionSet,
};
use dpsgld::experiment::emit_figure_data;
use dpsgld::rng::{Purpose, RngStreams};
use proptest::prelude::*;
use rand::Rng;

/// Softmax rows of random logits.
fn random_set(n: usize, k: usize, seed: u64) -> PredictionSet {
    let mut rng = RngStreams::new(seed).stream(Purpose::Data, 7);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let scale = rng.random_range(0.1..6.0);
        let logits: Vec<f64> = (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        rows.push(logits.iter().map(|l| (l - max).exp() / z).collect::<Vec<_>>());
        labels.push(rng.random_range(0..k));
    }
    PredictionSet::from_rows(&rows, labels).unwrap()
}

/// Bin of a probability by explicit edge comparison: the first bin is
/// `[0, 1/M]`, every later bin is `(lo, hi]`.
fn oracle_bin(c: f64, m: usize) -> usize {
    (0..m)
        .find(|&b| {
            let hi = (b + 1) as f64 / m as f64;
            c <= hi || b == m - 1
        })
        .unwrap()
}

/// Per-class static binning, tabulated item by item.
fn oracle_sce(p: &PredictionSet, m: usize) -> f64 {
    let n = p.len() as f64;
    let mut total = 0.0;
    for k in 0..p.num_classes() {
        for b in 0..m {
            let members: Vec<usize> = (0..p.len()).filter(|&i| oracle_bin(p.row(i)[k], m) == b).collect();
            if members.is_empty() {
                continue;
            }
            let size = members.len() as f64;
            let acc = members.iter().filter(|&&i| p.labels()[i] == k).count() as f64 / size;
            let conf = members.iter().map(|&i| p.row(i)[k]).sum::<f64>() / size;
            total += size / n * (acc - conf).abs();
        }
    }
    total / p.num_classes() as f64
}

/// Per-class rank binning with sizes `floor(n/R)` or `ceil(n/R)`, the
/// larger ones first.
fn oracle_ace(p: &PredictionSet, r: usize) -> f64 {
    let n = p.len();
    let mut total = 0.0;
    for k in 0..p.num_classes() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| p.row(a)[k].partial_cmp(&p.row(b)[k]).unwrap().then(a.cmp(&b)));
        let mut start = 0;
        for bin in 0..r {
            let size = n / r + usize::from(bin < n % r);
            let members = &order[start..start + size];
            start += size;
            let acc = members.iter().filter(|&&i| p.labels()[i] == k).count() as f64 / size as f64;
            let conf = members.iter().map(|&i| p.row(i)[k]).sum::<f64>() / size as f64;
            total += size as f64 / n as f64 * (acc - conf).abs();
        }
        assert_eq!(start, n);
    }
    total / p.num_classes() as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
fn oracle_auc(p: &PredictionSet) -> f64 {
    let mut sum = 0.0;
    let mut used = 0;
    for k in 0..p.num_classes() {
        let pos: Vec<f64> = (0..p.len())
            .filter(|&i| p.labels()[i] == k)
            .map(|i| p.row(i)[k])
            .collect();
        let neg: Vec<f64> = (0..p.len())
            .filter(|&i| p.labels()[i] != k)
            .map(|i| p.row(i)[k])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for a in &pos {
            for b in &neg {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        sum += wins / (pos.len() * neg.len()) as f64;
        used += 1;
    }
    sum / used as f64
}

fn four_case() -> PredictionSet {
    // (confidence, correct): (0.6, yes), (0.8, no), (0.9, yes), (0.55, no)
    PredictionSet::from_rows(
        &[vec![0.6, 0.4], vec![0.8, 0.2], vec![0.1, 0.9], vec![0.45, 0.55]],
        vec![0, 1, 1, 0],
    )
    .unwrap()
}

#[test]
fn ece_hand_case() {
    let p = four_case();
    // 0.6, 0.8, 0.9 and 0.55 are not binary fractions, so "exact" means a
    // few ulps of 0.2125
    assert!((ece(&p, 2).unwrap() - 0.2125).abs() < 1e-15);
    let curve = reliability_curve(&p, 2).unwrap();
    assert_eq!(curve.counts, vec![0, 4]);
    assert_eq!(curve.accuracy[1], 0.5);
}

#[test]
fn single_bin_reduction_on_random_sets() {
    for seed in 0..100 {
        let p = random_set(50 + seed as usize, 2 + (seed as usize % 9), seed);
        let mean_conf = (0..p.len()).map(|i| p.confidence(i)).sum::<f64>() / p.len() as f64;
        let want = (accuracy(&p).unwrap() - mean_conf).abs();
        assert!((ece(&p, 1).unwrap() - want).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn sce_binary_hand_case_matches_tabulation() {
    let p = PredictionSet::from_rows(
        &[vec![0.9, 0.1], vec![0.3, 0.7], vec![0.5, 0.5], vec![0.05, 0.95]],
        vec![0, 0, 1, 1],
    )
    .unwrap();
    for m in [1, 2, 3, 4, 10, 15] {
        assert!((sce(&p, m).unwrap() - oracle_sce(&p, m)).abs() < 1e-15, "M = {m}");
    }
}

#[test]
fn sce_and_ace_match_oracles_on_random_sets() {
    for seed in 0..20 {
        let p = random_set(40 + 7 * seed as usize, 2 + seed as usize % 5, 100 + seed);
        for m in [1, 5, 15] {
            assert!((sce(&p, m).unwrap() - oracle_sce(&p, m)).abs() < 1e-12);
            assert!((ace(&p, m).unwrap() - oracle_ace(&p, m)).abs() < 1e-12);
        }
    }
}

#[test]
fn ace_ten_sample_hand_case() {
    let p = random_set(10, 3, 42);
    for r in [1, 2, 3, 4, 7, 10] {
        assert!((ace(&p, r).unwrap() - oracle_ace(&p, r)).abs() < 1e-15, "R = {r}");
    }
    // singleton bins
    let mut want = 0.0;
    for i in 0..10 {
        for k in 0..3 {
            want += ((p.labels()[i] == k) as u8 as f64 - p.row(i)[k]).abs();
        }
    }
    assert!((ace(&p, 10).unwrap() - want / 30.0).abs() < 1e-15);
    assert!(ace(&p, 11).is_err());
}

#[test]
fn degenerate_single_class() {
    let p = PredictionSet::from_rows(&vec![vec![1.0]; 5], vec![0; 5]).unwrap();
    assert_eq!(sce(&p, 15).unwrap(), 0.0);
    assert_eq!(ece(&p, 15).unwrap(), 0.0);
}

#[test]
fn auc_hand_case_and_extremes() {
    let p = PredictionSet::from_rows(
        &[
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
            vec![0.4, 0.4, 0.2],
            vec![0.1, 0.1, 0.8],
            vec![0.6, 0.3, 0.1],
        ],
        vec![0, 1, 2, 1, 2, 0],
    )
    .unwrap();
    assert!((auc_macro_ovr(&p).unwrap() - oracle_auc(&p)).abs() < 1e-15);
    let sep = PredictionSet::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7]], vec![0, 0, 1]).unwrap();
    assert_eq!(auc_macro_ovr(&sep).unwrap(), 1.0);
    let tied = PredictionSet::from_rows(&vec![vec![0.25; 4]; 8], vec![0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
    assert_eq!(auc_macro_ovr(&tied).unwrap(), 0.5);
    for seed in 0..10 {
        let p = random_set(30, 4, seed);
        assert!((auc_macro_ovr(&p).unwrap() - oracle_auc(&p)).abs() < 1e-12);
    }
}

#[test]
fn perfectly_calibrated_simulation() {
    let n = 100_000;
    let k = 10;
    let mut rng = RngStreams::new(2024).stream(Purpose::Data, 3);
    let mut probs = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // confidence on a grid over [1/K, 1]
        let c = 0.1 + 0.9 * (i % 1000) as f64 / 999.0;
        let top = rng.random_range(0..k);
        for j in 0..k {
            probs.push(if j == top { c } else { (1.0 - c) / (k - 1) as f64 });
        }
        let label = if rng.random_bool(c) {
            top
        } else {
            (top + rng.random_range(1..k)) % k
        };
        labels.push(label);
    }
    let p = PredictionSet::new(probs, labels, k).unwrap();
    assert!(ece(&p, 15).unwrap() < 0.01);
    let curve = reliability_curve(&p, 15).unwrap();
    for b in 0..15 {
        if curve.counts[b] > 0 {
            assert!((curve.accuracy[b] - curve.mean_confidence[b]).abs() < 0.02, "bin {b}");
        }
    }
}

#[test]
fn overconfident_dump_gives_a_single_point() {
    let p = PredictionSet::from_rows(&vec![vec![1.0, 0.0]; 6], vec![0, 1, 0, 1, 0, 1]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (rel, hist) = emit_figure_data(&p, 15, dir.path()).unwrap();
    let curve = BinStats::read_csv(std::fs::File::open(rel).unwrap()).unwrap();
    let occupied: Vec<usize> = (0..15).filter(|&b| curve.counts[b] > 0).collect();
    assert_eq!(occupied, vec![14]);
    assert_eq!((curve.mean_confidence[14], curve.accuracy[14]), (1.0, 0.5));
    let h = BinStats::read_csv(std::fs::File::open(hist).unwrap()).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), 6);
}

#[test]
fn histogram_of_a_uniform_grid_is_flat() {
    // binary top-label confidences live in [0.5, 1]: midpoints of the upper
    // five bins of a 10-bin grid, 6 of each
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let c = 0.55 + 0.1 * (i % 5) as f64;
            vec![c, 1.0 - c]
        })
        .collect();
    let p = PredictionSet::from_rows(&rows, vec![0; 30]).unwrap();
    let h = confidence_histogram(&p, 10).unwrap();
    assert_eq!(h.iter().sum::<usize>(), 30);
    assert_eq!(h, vec![0, 0, 0, 0, 0, 6, 6, 6, 6, 6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_row_order(seed in any::<u64>(), shift in 1usize..40) {
        let p = random_set(40, 4, seed);
        let order: Vec<usize> = (0..40).map(|i| (i * 7 + shift) % 40).collect();
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| p.row(i).to_vec()).collect();
        let q = PredictionSet::from_rows(&rows, order.iter().map(|&i| p.labels()[i]).collect()).unwrap();
        prop_assert!((ece(&p, 15).unwrap() - ece(&q, 15).unwrap()).abs() < 1e-12);
        prop_assert!((sce(&p, 15).unwrap() - sce(&q, 15).unwrap()).abs() < 1e-12);
        prop_assert!((accuracy(&p).unwrap() - accuracy(&q).unwrap()).abs() < 1e-12);
        prop_assert!((auc_macro_ovr(&p).unwrap() - auc_macro_ovr(&q).unwrap()).abs() < 1e-12);
        prop_assert!((ace(&p, 8).unwrap() - ace(&q, 8).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_the_unit_interval(seed in any::<u64>(), n in 15usize..80, k in 2usize..8) {
        let p = random_set(n, k, seed);
        for v in [ece(&p, 15).unwrap(), sce(&p, 15).unwrap(), ace(&p, 15).unwrap(), auc_macro_ovr(&p).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let curve = reliability_curve(&p, 15).unwrap();
        prop_assert!((curve.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(curve.counts.iter().sum::<usize>(), n);
        prop_assert_eq!(curve.ece(), ece(&p, 15).unwrap());
    }

    #[test]
    fn ece_ignores_non_argmax_mass(seed in any::<u64>()) {
        let p = random_set(30, 5, seed);
        let rows: Vec<Vec<f64>> = p
            .rows()
            .map(|row| {
                let top = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                let rest = 1.0 - row[top];
                // move all non-argmax mass evenly across the other classes
                (0..row.len())
                    .map(|j| if j == top { row[top] } else { rest / (row.len() - 1) as f64 })
                    .collect()
            })
            .collect();
        let q = PredictionSet::from_rows(&rows, p.labels().to_vec()).unwrap();
        for i in 0..30 {
            prop_assert_eq!(p.predicted(i), q.predicted(i));
        }
        prop_assert!((ece(&p, 15).unwrap() - ece(&q, 15).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn binary_sce_terms_are_mirror_images(probs in prop::collection::vec(0.0f64..=1.0, 4..40), seed in any::<u64>()) {
        let n = probs.len();
        let mut rng = RngStreams::new(seed).stream(Purpose::Data, 1);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let rows: Vec<Vec<f64>> = probs.iter().map(|&a| vec![a, 1.0 - a]).collect();
        let mirrored: Vec<Vec<f64>> = probs.iter().map(|&a| vec![1.0 - a, a]).collect();
        let flipped: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        let p = PredictionSet::from_rows(&rows, labels).unwrap();
        let q = PredictionSet::from_rows(&mirrored, flipped).unwrap();
        prop_assert!((sce(&p, 10).unwrap() - sce(&q, 10).unwrap()).abs() < 1e-12);
    }
}
