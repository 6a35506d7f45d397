//! Per-example gradients of a small convolutional net, checked against
//! central finite differences.
//!
//! cargo run --release --example gradient_check

use dpsgld::engine::{self, PriorSpec};
use dpsgld::rng::{Purpose, RngStreams};
use dpsgld::{ModelSpec, Tensor};
use rand::Rng;

fn main() -> dpsgld::Result<()> {
    let model = ModelSpec::parse(vec![1, 8, 8], "conv:1:3:3:1,relu,maxpool,flatten,dense:27:4", 4)?;
    let streams = RngStreams::new(7);
    let mut rng = streams.stream(Purpose::Data, 0);
    let batch = Tensor::new(vec![5, 1, 8, 8], (0..5 * 64).map(|_| rng.random::<f64>()).collect())?;
    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
    let params = model.init_params(&mut streams.stream(Purpose::Init, 0));

    let (loss, grads) = engine::loss_and_grads(&model, &params, &batch, &labels, PriorSpec::Flat)?;
    println!("{} parameters, mean loss {loss:.4}", model.num_params());
    for (i, row) in grads.rows().enumerate() {
        let norm = row.iter().map(|g| g * g).sum::<f64>().sqrt();
        println!("example {i}: label {}, gradient norm {norm:.4}", labels[i]);
    }

    let fd = engine::finite_diff_gradient(&model, &params, &batch, &labels, PriorSpec::Flat, 1e-5)?;
    let mean = grads.mean();
    let worst = mean
        .values()
        .iter()
        .zip(fd.values())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max);
    println!("max relative error vs finite differences {worst:.2e}");
    Ok(())
}
