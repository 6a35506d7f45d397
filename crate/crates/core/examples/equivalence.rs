//! DP-SGLD without pre-noise is DP-SGD with a step-dependent noise
//! multiplier. Both optimizers share seeds, so their parameters coincide.
//!
//! cargo run --release --example equivalence

use dpsgld::data::{poisson_subsample, synthetic_gaussian_blobs, Split};
use dpsgld::engine::PriorSpec;
use dpsgld::optim::{sgld_noise_std, DpConfig, LrSchedule, Mode, Optimizer};
use dpsgld::rng::{Purpose, RngStreams};
use dpsgld::ModelSpec;

fn main() -> dpsgld::Result<()> {
    let train = synthetic_gaussian_blobs(3, 600, 5, 4.0, 1, Split::Train)?;
    let model = ModelSpec::linear(5, 3)?;
    let streams = RngStreams::new(21);
    let params = model.init_params(&mut streams.stream(Purpose::Init, 0));
    let schedule = LrSchedule::default();
    let (tau, p) = (3.0, 0.05);

    let dp = DpConfig::dp_sgld(1.0, tau, p).with_pre_noise(0.0);
    let mut langevin = Optimizer::new(Mode::DpSgld, params.clone(), schedule, dp, PriorSpec::Flat, streams)?;
    let dp = DpConfig::dp_sgd(1.0, 1.0, p);
    let mut gaussian = Optimizer::new(Mode::DpSgd, params, schedule, dp, PriorSpec::Flat, streams)?;

    let mut draw = 0;
    while langevin.steps_taken() < 50 {
        let idx = poisson_subsample(train.len(), p, &mut streams.stream(Purpose::Subsample, draw))?;
        draw += 1;
        if idx.is_empty() {
            continue;
        }
        let (batch, labels) = train.gather(&idx);
        let sigma = sgld_noise_std(schedule.rate(gaussian.steps_taken()), tau)?;
        gaussian.dp_mut().noise_multiplier = Some(sigma);
        let stats = langevin.step(&model, &batch, &labels)?;
        gaussian.step(&model, &batch, &labels)?;
        let gap = langevin
            .params()
            .values()
            .iter()
            .zip(gaussian.params().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if stats.step % 10 == 0 {
            println!(
                "step {:>2}: sigma {sigma:.4}, loss {:.4}, max parameter gap {gap:.1e}",
                stats.step, stats.loss
            );
        }
    }
    Ok(())
}
