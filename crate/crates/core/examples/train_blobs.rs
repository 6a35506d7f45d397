//! Trains one model per procedure on Gaussian blobs under a privacy budget
//! and prints the comparison table.
//!
//! cargo run --release --example train_blobs

use dpsgld::accountant::PrivacyBudget;
use dpsgld::experiment::{compare, run, DatasetChoice, ExperimentConfig, ModelChoice};
use dpsgld::optim::{LrSchedule, Mode};

fn main() -> dpsgld::Result<()> {
    let base = ExperimentConfig {
        dataset: DatasetChoice::Blobs {
            classes: 4,
            dim: 10,
            train: 2000,
            test: 1000,
            separation: 1.5,
        },
        model: ModelChoice::Mlp { hidden: vec![16] },
        batch_size: 64,
        max_steps: 2000,
        seed: 3,
        ..ExperimentConfig::default()
    };
    let sgd = ExperimentConfig {
        mode: Mode::Sgd,
        clip_bound: f64::INFINITY,
        schedule: LrSchedule::Constant { lr: 0.1 },
        max_steps: 500,
        ..base.clone()
    };
    let budget = Some(PrivacyBudget::new(1.0, 1e-5)?);
    let dp_sgd = ExperimentConfig {
        mode: Mode::DpSgd,
        noise_multiplier: Some(2.0),
        schedule: LrSchedule::Constant { lr: 0.1 },
        budget,
        ..base.clone()
    };
    let dp_sgld = ExperimentConfig {
        mode: Mode::DpSgld,
        temperature: Some(2.0),
        budget,
        ..base
    };

    let mut summaries = Vec::new();
    for config in [sgd, dp_sgd, dp_sgld] {
        let report = run(&config)?;
        let s = &report.summary;
        println!(
            "{:<8} steps {:>4}  epsilon {:>6.3}  accuracy {:.3}  ECE {:.4}",
            s.procedure, s.steps, s.epsilon, s.accuracy, s.ece
        );
        summaries.push(report.summary);
    }
    println!("\n{}", compare(&summaries)?.render());
    Ok(())
}
