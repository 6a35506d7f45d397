//! Trains SGD, DP-SGD and DP-SGLD on an MNIST subset with the configs in
//! `configs/` and prints the comparison table. Takes a few minutes.
//!
//! cargo run --release --example compare_mnist -- [data/mnist] [seed]

use std::path::{Path, PathBuf};

use dpsgld::data::{load_mnist_dir, Split};
use dpsgld::experiment::{compare, run_on, DatasetChoice, ExperimentConfig, RunHooks};

fn main() -> dpsgld::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let train = load_mnist_dir(&dir, Split::Train)?;
    let test = load_mnist_dir(&dir, Split::Test)?;

    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut summaries = Vec::new();
    for name in ["mnist_sgd.conf", "mnist_dp_sgd.conf", "mnist_dp_sgld.conf"] {
        let mut config = ExperimentConfig::from_file(&configs.join(name))?;
        config.seed = seed;
        let subset = match config.dataset {
            DatasetChoice::Mnist { subset, .. } => subset.unwrap_or(train.len()),
            _ => train.len(),
        };
        let report = run_on(
            &config,
            &train.shuffled_subset(subset, seed),
            &test,
            RunHooks::default(),
        )?;
        let s = &report.summary;
        println!(
            "{:<8} {:>5} steps in {:>5.0}s  epsilon {:>6.3}  accuracy {:.4}  ECE {:.4}",
            s.procedure, s.steps, report.wall_clock_secs, s.epsilon, s.accuracy, s.ece
        );
        summaries.push(report.summary);
    }
    println!("\n{}", compare(&summaries)?.render());
    Ok(())
}
