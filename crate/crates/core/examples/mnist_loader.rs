//! Loads the MNIST IDX files and prints a digit as ASCII art.
//!
//! cargo run --release --example mnist_loader -- [data/mnist]

use std::path::PathBuf;

use dpsgld::data::{load_mnist_dir, poisson_subsample, Split};
use dpsgld::rng::{Purpose, RngStreams};

fn main() -> dpsgld::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let train = load_mnist_dir(&dir, Split::Train)?;
    let test = load_mnist_dir(&dir, Split::Test)?;
    println!(
        "train {} x {:?}, test {} x {:?}",
        train.len(),
        train.example_shape(),
        test.len(),
        test.example_shape()
    );

    let mut counts = [0usize; 10];
    train.labels().iter().for_each(|&l| counts[l] += 1);
    println!("train label counts {counts:?}");

    let image = train.features().row(0);
    println!("\nfirst training digit (label {}):", train.labels()[0]);
    for row in image.chunks(28) {
        let line: String = row
            .iter()
            .map(|&v| {
                if v > 0.5 {
                    '#'
                } else if v > 0.1 {
                    '.'
                } else {
                    ' '
                }
            })
            .collect();
        println!("  {line}");
    }

    let streams = RngStreams::new(0);
    let p = 256.0 / train.len() as f64;
    let sizes: Vec<usize> = (0..8)
        .map(|t| poisson_subsample(train.len(), p, &mut streams.stream(Purpose::Subsample, t)).map(|b| b.len()))
        .collect::<dpsgld::Result<_>>()?;
    println!("\nPoisson batch sizes at expected 256: {sizes:?}");
    Ok(())
}
