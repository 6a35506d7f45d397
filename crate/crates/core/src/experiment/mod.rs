//! End-to-end training runs: data, model, optimizer, accountant and metrics.

pub mod config;
pub mod report;

use std::time::Instant;

pub use config::{DatasetChoice, ExperimentConfig, ModelChoice};
pub use report::{
    compare, emit_figure_data, figure_data_from_dir, ComparisonRow, ComparisonTable, EvalPoint, OutputPaths,
    ReportSummary, RunReport, TraceRow,
};

use crate::accountant::{step_mu, Accountant};
use crate::calibration::{self, PredictionSet};
use crate::data::{self, Dataset, Split};
use crate::engine;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::optim::Optimizer;
use crate::rng::{Purpose, RngStreams};

/// Knobs that only tests and diagnostics should touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunHooks {
    /// When false, private runs keep stepping past the budget (up to
    /// `max_steps`) and only record the overspend in the trace.
    pub enforce_budget_gate: bool,
}

impl Default for RunHooks {
    fn default() -> Self {
        Self {
            enforce_budget_gate: true,
        }
    }
}

/// Loads the train and test splits named by the config.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetChoice::Mnist { dir, subset } => {
            let train = data::load_mnist_dir(dir, Split::Train)?;
            let test = data::load_mnist_dir(dir, Split::Test)?;
            let train = match subset {
                Some(n) => train.shuffled_subset(*n, config.seed),
                None => train,
            };
            Ok((train, test))
        }
        DatasetChoice::Blobs {
            classes,
            dim,
            train,
            test,
            separation,
        } => Ok((
            data::synthetic_gaussian_blobs(*classes, *train, *dim, *separation, config.seed, Split::Train)?,
            data::synthetic_gaussian_blobs(*classes, *test, *dim, *separation, config.seed, Split::Test)?,
        )),
    }
}

/// Loads the data, trains, evaluates and writes outputs if `out_dir` is set.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    run_with_hooks(config, RunHooks::default())
}

pub fn run_with_hooks(config: &ExperimentConfig, hooks: RunHooks) -> Result<RunReport> {
    config.validate()?;
    let (train, test) = load_datasets(config)?;
    let mut report = run_on(config, &train, &test, hooks)?;
    if let Some(dir) = &config.out_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}

/// Class probabilities for every example of `ds`, in chunks.
pub fn predict(model: &ModelSpec, params: &ParamVector, ds: &Dataset) -> Result<PredictionSet> {
    const CHUNK: usize = 512;
    let mut probs = Vec::with_capacity(ds.len() * ds.num_classes());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let (batch, _) = ds.gather(chunk);
        probs.extend_from_slice(engine::predict_proba(model, params, &batch)?.data());
    }
    PredictionSet::new(probs, ds.labels().to_vec(), ds.num_classes())
}

/// Trains on already-loaded data. Does not write any files.
pub fn run_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset, hooks: RunHooks) -> Result<RunReport> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("training or test split"));
    }
    if train.num_classes() != test.num_classes() || train.example_shape() != test.example_shape() {
        return Err(Error::Shape("train and test splits disagree".into()));
    }
    let started = Instant::now();
    let model = config.model.build(train.example_shape(), train.num_classes())?;
    let streams = RngStreams::new(config.seed);
    let params = model.init_params(&mut streams.stream(Purpose::Init, 0));

    let n = train.len();
    let p = (config.batch_size as f64 / n as f64).min(1.0);
    let dp = config.dp_config(p);
    let mut opt = Optimizer::new(config.mode, params, config.schedule, dp, config.prior, streams)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut accountant = match (config.mode.is_private(), config.budget) {
        (true, Some(b)) => Some(Accountant::new(b)),
        _ => None,
    };

    let mut trace = Vec::new();
    let mut losses = Vec::new();
    let mut evals = Vec::new();
    let mut halted_by_budget = false;
    // Empty Poisson samples do not count as steps, so bound the draws too.
    let max_draws = config.max_steps.saturating_mul(20).saturating_add(1000);
    let mut draw = 0u64;
    while opt.steps_taken() < config.max_steps {
        if draw >= max_draws {
            log::warn!("stopping after {draw} Poisson draws with {} steps", opt.steps_taken());
            break;
        }
        let indices = data::poisson_subsample(n, p, &mut streams.stream(Purpose::Subsample, draw))?;
        draw += 1;
        if indices.is_empty() {
            continue;
        }

        let mut charged = None;
        if let Some(acct) = &accountant {
            let sigma = opt
                .noise_multiplier()
                .ok_or_else(|| Error::Config("private mode without a noise level".into()))?;
            let mu = step_mu(p, sigma)?;
            if hooks.enforce_budget_gate && acct.would_exceed(mu) {
                halted_by_budget = true;
                break;
            }
            charged = Some((sigma, mu));
        }

        let (batch, labels) = train.gather(&indices);
        let stats = opt.step(&model, &batch, &labels)?;
        losses.push(stats.loss);

        if let (Some(acct), Some((sigma, mu))) = (accountant.as_mut(), charged) {
            acct.record_step(mu)?;
            trace.push(TraceRow {
                step: stats.step,
                noise_multiplier: sigma,
                step_mu: mu,
                mu: acct.mu(),
                epsilon: acct.epsilon()?,
            });
        }
        if config.eval_every > 0 && opt.steps_taken() % config.eval_every == 0 {
            let preds = predict(&model, opt.params(), test)?;
            evals.push(EvalPoint {
                step: opt.steps_taken(),
                accuracy: calibration::accuracy(&preds)?,
                ece: calibration::ece(&preds, config.ece_bins)?,
            });
            log::info!(
                "step {}: loss {:.4}, test acc {:.4}",
                opt.steps_taken(),
                stats.loss,
                evals.last().map_or(0.0, |e| e.accuracy)
            );
        }
    }

    let predictions = predict(&model, opt.params(), test)?;
    let metrics = calibration::summarize(&predictions, config.ece_bins, config.ace_ranges)?;
    let reliability = calibration::reliability_curve(&predictions, config.ece_bins)?;
    let (epsilon, delta, mu) = match &accountant {
        Some(acct) => (acct.epsilon()?, Some(acct.budget().delta()), Some(acct.mu())),
        None => (f64::INFINITY, None, None),
    };
    let summary = ReportSummary {
        procedure: config.mode.label().to_string(),
        dataset: config.dataset.label(),
        epsilon,
        delta,
        mu,
        accuracy: metrics.accuracy,
        auc: metrics.auc,
        ece: metrics.ece,
        sce: Some(metrics.sce),
        ace: Some(metrics.ace),
        steps: opt.steps_taken(),
        halted_by_budget,
        ece_bins: config.ece_bins,
        seed: config.seed,
    };
    log::info!(
        "{} finished: {} steps, acc {:.4}, ece {:.4}, eps {}",
        summary.procedure,
        summary.steps,
        summary.accuracy,
        summary.ece,
        summary.epsilon
    );
    Ok(RunReport {
        summary,
        trace,
        losses,
        evals,
        predictions,
        reliability,
        config_echo: config.to_config_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        outputs: None,
    })
}
