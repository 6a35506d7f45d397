//! Calibration metrics on a synthetic overconfident classifier: ECE, SCE,
//! ACE, AUC and the reliability diagram.
//!
//! cargo run --release --example calibration_report

use dpsgld::calibration::{confidence_histogram, reliability_curve, summarize, PredictionSet};
use dpsgld::rng::{Purpose, RngStreams};
use rand::Rng;

fn main() -> dpsgld::Result<()> {
    let (n, k) = (20_000, 10);
    let mut rng = RngStreams::new(11).stream(Purpose::Data, 0);
    let mut probs = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        // reported confidence is higher than the true hit rate
        let hit: f64 = rng.random_range(0.3..0.9);
        let shown = (hit + 0.15).min(0.99);
        let top = rng.random_range(0..k);
        probs.extend((0..k).map(|j| {
            if j == top {
                shown
            } else {
                (1.0 - shown) / (k - 1) as f64
            }
        }));
        labels.push(if rng.random_bool(hit) {
            top
        } else {
            (top + rng.random_range(1..k)) % k
        });
    }
    let preds = PredictionSet::new(probs, labels, k)?;
    let m = summarize(&preds, 15, 15)?;
    println!(
        "accuracy {:.4}  AUC {:.4}  ECE {:.4}  SCE {:.4}  ACE {:.4}",
        m.accuracy, m.auc, m.ece, m.sce, m.ace
    );

    let curve = reliability_curve(&preds, 10)?;
    let hist = confidence_histogram(&preds, 10)?;
    println!("\n bin          count  confidence  accuracy");
    for (b, count) in hist.iter().enumerate() {
        println!(
            " [{:.1}, {:.1}]  {count:>6}  {:>10.3}  {:>8.3}",
            curve.edges[b],
            curve.edges[b + 1],
            curve.mean_confidence[b],
            curve.accuracy[b]
        );
    }
    Ok(())
}
