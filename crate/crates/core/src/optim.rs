//! SGD, DP-SGD and DP-SGLD updates.
//!
//! The private pipelines differ only in where the noise scale comes from and
//! whether per-example gradients are pre-noised before clipping:
//!
//! | mode    | per example              | aggregate noise std       |
//! |---------|--------------------------|---------------------------|
//! | SGD     | gradient                 | none                      |
//! | DP-SGD  | clip                     | `sigma * C`               |
//! | DP-SGLD | pre-noise (rho), clip    | `sqrt(2 * lr_t * tau) * C`|
//!
//! In both private modes the noise is drawn once per step, added to the sum
//! of clipped gradients, and the result is divided by the batch size.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{self, PerExampleGrads, PriorSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::rng::{Purpose, RngStreams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Sgd,
    DpSgd,
    DpSgld,
}

impl Mode {
    pub fn is_private(self) -> bool {
        !matches!(self, Mode::Sgd)
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Sgd => "SGD",
            Mode::DpSgd => "DP-SGD",
            Mode::DpSgld => "DP-SGLD",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sgd => "sgd",
            Mode::DpSgd => "dp-sgd",
            Mode::DpSgld => "dp-sgld",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Mode::Sgd),
            "dp-sgd" | "dpsgd" => Ok(Mode::DpSgd),
            "dp-sgld" | "dpsgld" => Ok(Mode::DpSgld),
            other => Err(Error::Config(format!("unknown optimizer mode `{other}`"))),
        }
    }
}

/// Privacy-related knobs of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    /// Per-example L2 clipping bound `C`. `f64::INFINITY` disables clipping
    /// and is only accepted in SGD mode.
    pub clip_bound: f64,
    /// Standard deviation `rho` of the pre-clipping noise (DP-SGLD only).
    pub pre_noise_scale: f64,
    /// Langevin temperature `tau` (DP-SGLD).
    pub temperature: Option<f64>,
    /// Noise multiplier `sigma` (DP-SGD).
    pub noise_multiplier: Option<f64>,
    /// Poisson inclusion probability `m / N`.
    pub sampling_probability: f64,
}

impl DpConfig {
    /// Non-private configuration: no clipping, no noise.
    pub fn none(sampling_probability: f64) -> Self {
        Self {
            clip_bound: f64::INFINITY,
            pre_noise_scale: 0.0,
            temperature: None,
            noise_multiplier: None,
            sampling_probability,
        }
    }

    pub fn dp_sgd(clip_bound: f64, noise_multiplier: f64, sampling_probability: f64) -> Self {
        Self {
            clip_bound,
            pre_noise_scale: 0.0,
            temperature: None,
            noise_multiplier: Some(noise_multiplier),
            sampling_probability,
        }
    }

    /// DP-SGLD with the default pre-noise scale `0.1 * C`.
    pub fn dp_sgld(clip_bound: f64, temperature: f64, sampling_probability: f64) -> Self {
        Self {
            clip_bound,
            pre_noise_scale: 0.1 * clip_bound,
            temperature: Some(temperature),
            noise_multiplier: None,
            sampling_probability,
        }
    }

    pub fn with_pre_noise(mut self, rho: f64) -> Self {
        self.pre_noise_scale = rho;
        self
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.sampling_probability > 0.0 && self.sampling_probability <= 1.0) {
            return bad(format!(
                "sampling probability {} outside (0, 1]",
                self.sampling_probability
            ));
        }
        if !(self.clip_bound > 0.0) {
            return bad(format!("clip bound {} must be positive", self.clip_bound));
        }
        if !(self.pre_noise_scale >= 0.0 && self.pre_noise_scale.is_finite()) {
            return bad(format!("pre-noise scale {}", self.pre_noise_scale));
        }
        if mode.is_private() && !self.clip_bound.is_finite() {
            return bad("private modes need a finite clip bound".into());
        }
        match mode {
            Mode::Sgd => Ok(()),
            Mode::DpSgd => match self.noise_multiplier {
                Some(s) if s > 0.0 && s.is_finite() => Ok(()),
                other => bad(format!("DP-SGD needs a positive noise multiplier, got {other:?}")),
            },
            Mode::DpSgld => match self.temperature {
                Some(t) if t > 0.0 && t.is_finite() => Ok(()),
                other => bad(format!("DP-SGLD needs a positive temperature, got {other:?}")),
            },
        }
    }
}

/// Learning rate `lr_t` as a function of the step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `initial * (1 + t / scale)^(-gamma)`.
    PolynomialDecay {
        initial: f64,
        gamma: f64,
        scale: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::PolynomialDecay {
            initial: 0.5,
            gamma: 0.55,
            scale: 100.0,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::PolynomialDecay { initial, gamma, scale } => initial * (1.0 + step as f64 / scale).powf(-gamma),
        }
    }

    /// Both variants must keep `0 < lr_t < 1` for every step.
    pub fn validate(&self) -> Result<()> {
        let initial = match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::PolynomialDecay { initial, gamma, scale } => {
                if !(gamma >= 0.0 && gamma.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "decay exponent {gamma} / scale {scale}"
                    )));
                }
                initial
            }
        };
        if !(initial > 0.0 && initial < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "initial learning rate {initial} outside (0, 1)"
            )));
        }
        Ok(())
    }
}

/// `g / max(1, |g|_2 / C)`.
pub fn clip_gradient(g: &ParamVector, clip_bound: f64) -> Result<ParamVector> {
    let mut out = g.clone();
    clip_in_place(out.values_mut(), clip_bound)?;
    Ok(out)
}

/// In-place clip; returns the pre-clip norm.
pub fn clip_in_place(g: &mut [f64], clip_bound: f64) -> Result<f64> {
    if !(clip_bound > 0.0) {
        return Err(Error::InvalidArgument(format!("clip bound {clip_bound}")));
    }
    let norm = crate::model::l2_norm(g);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm {norm}")));
    }
    let factor = norm / clip_bound;
    if factor > 1.0 {
        g.iter_mut().for_each(|v| *v /= factor);
    }
    Ok(norm)
}

/// Adds i.i.d. `N(0, rho^2)` noise to every coordinate.
pub fn pre_noise<R: Rng + ?Sized>(g: &ParamVector, rho: f64, rng: &mut R) -> Result<ParamVector> {
    let mut out = g.clone();
    add_gaussian(out.values_mut(), rho, rng)?;
    Ok(out)
}

fn add_gaussian<R: Rng + ?Sized>(v: &mut [f64], std: f64, rng: &mut R) -> Result<()> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise std {std}")));
    }
    if std == 0.0 {
        return Ok(());
    }
    for x in v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
    Ok(())
}

/// `(sum_i clipped[i] + xi) / denom` with `xi ~ N(0, (noise_std * C)^2 I)`,
/// one noise draw per coordinate for the whole batch.
pub fn aggregate_and_noise<R: Rng + ?Sized>(
    clipped: &PerExampleGrads,
    clip_bound: f64,
    noise_std: f64,
    denom: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    if clipped.batch_size() == 0 {
        return Err(Error::Empty("clipped gradients"));
    }
    let mut sum = vec![0.0; clipped.num_params()];
    for row in clipped.rows() {
        for (s, g) in sum.iter_mut().zip(row) {
            *s += g;
        }
    }
    noisy_average(&mut sum, clip_bound, noise_std, denom, rng)?;
    ParamVector::new(clipped.layout().to_vec(), sum)
}

fn noisy_average<R: Rng + ?Sized>(
    sum: &mut [f64],
    clip_bound: f64,
    noise_std: f64,
    denom: usize,
    rng: &mut R,
) -> Result<()> {
    if denom == 0 {
        return Err(Error::Empty("batch"));
    }
    let std = noise_std * clip_bound;
    if !(noise_std >= 0.0) || !(std.is_finite() || noise_std == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise std {noise_std} with clip bound {clip_bound}"
        )));
    }
    if noise_std > 0.0 {
        add_gaussian(sum, std, rng)?;
    }
    let d = denom as f64;
    sum.iter_mut().for_each(|s| *s /= d);
    Ok(())
}

/// Langevin noise multiplier `sqrt(2 * lr_t * tau)`; DP-SGLD noise then has
/// standard deviation `sqrt(2 * lr_t * tau) * C`, exactly DP-SGD's `sigma * C`
/// when the two multipliers coincide.
pub fn sgld_noise_std(lr: f64, temperature: f64) -> Result<f64> {
    if !(lr > 0.0) || !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} and temperature {temperature} must be positive"
        )));
    }
    Ok((2.0 * lr * temperature).sqrt())
}

/// Temperature that makes DP-SGLD's multiplier equal `sigma` at rate `lr`.
pub fn temperature_matching(sigma: f64, lr: f64) -> f64 {
    sigma * sigma / (2.0 * lr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Index of the step that was taken (before increment).
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
    pub noise_multiplier: Option<f64>,
    pub batch_size: usize,
}

/// Parameters plus everything needed to advance them one step at a time.
#[derive(Debug, Clone)]
pub struct Optimizer {
    params: ParamVector,
    step: u64,
    schedule: LrSchedule,
    dp: DpConfig,
    mode: Mode,
    prior: PriorSpec,
    streams: RngStreams,
}

impl Optimizer {
    pub fn new(
        mode: Mode,
        params: ParamVector,
        schedule: LrSchedule,
        dp: DpConfig,
        prior: PriorSpec,
        streams: RngStreams,
    ) -> Result<Self> {
        schedule.validate()?;
        dp.validate(mode)?;
        Ok(Self {
            params,
            step: 0,
            schedule,
            dp,
            mode,
            prior,
            streams,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dp(&self) -> &DpConfig {
        &self.dp
    }

    /// For harnesses that vary the DP-SGD multiplier step by step.
    pub fn dp_mut(&mut self) -> &mut DpConfig {
        &mut self.dp
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Learning rate the next step will use.
    pub fn learning_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }

    /// Effective noise multiplier of the next step (`None` in SGD mode).
    /// This is what the privacy accountant charges for.
    pub fn noise_multiplier(&self) -> Option<f64> {
        match self.mode {
            Mode::Sgd => None,
            Mode::DpSgd => self.dp.noise_multiplier,
            Mode::DpSgld => {
                let tau = self.dp.temperature?;
                sgld_noise_std(self.learning_rate(), tau).ok()
            }
        }
    }

    /// One update on an already-sampled batch. The batch must be non-empty;
    /// empty Poisson samples are skipped by the caller.
    pub fn step(&mut self, model: &ModelSpec, batch: &Tensor, labels: &[usize]) -> Result<StepStats> {
        let t = self.step;
        let lr = self.schedule.rate(t);
        let noise = self.noise_multiplier();
        let clip = self.dp.clip_bound;
        let rho = if self.mode == Mode::DpSgld {
            self.dp.pre_noise_scale
        } else {
            0.0
        };
        let streams = self.streams;

        let mut sum = vec![0.0; self.params.len()];
        let loss = engine::for_each_example_gradient(model, &self.params, batch, labels, self.prior, |i, g| {
            if rho > 0.0 {
                let mut rng = streams.substream(Purpose::PreNoise, t, i as u64);
                add_gaussian(g, rho, &mut rng)?;
            }
            if clip.is_finite() {
                clip_in_place(g, clip)?;
            }
            for (s, v) in sum.iter_mut().zip(g.iter()) {
                *s += v;
            }
            Ok(())
        })?;

        let b = labels.len();
        let mut rng = streams.stream(Purpose::AggregateNoise, t);
        noisy_average(&mut sum, clip, noise.unwrap_or(0.0), b, &mut rng)?;

        for (p, g) in self.params.values_mut().iter_mut().zip(&sum) {
            *p -= lr * g;
        }
        if let Some(bad) = self.params.values().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter became {bad} at step {t}")));
        }
        self.step += 1;
        Ok(StepStats {
            step: t,
            loss,
            learning_rate: lr,
            noise_multiplier: noise,
            batch_size: b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(v: &[f64]) -> ParamVector {
        ParamVector::from_flat(v.to_vec())
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_gradient(&flat(&[3.0, 4.0]), 5.0).unwrap().values(), &[3.0, 4.0]);
        assert_eq!(clip_gradient(&flat(&[3.0, 4.0]), 2.5).unwrap().values(), &[1.5, 2.0]);
        assert_eq!(clip_gradient(&flat(&[0.0, 0.0]), 0.3).unwrap().values(), &[0.0, 0.0]);
        assert!(clip_gradient(&flat(&[f64::NAN]), 1.0).is_err());
        assert!(clip_gradient(&flat(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn zero_pre_noise_is_identity_and_seeded_noise_repeats() {
        let g = flat(&[1.0, -2.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pre_noise(&g, 0.0, &mut rng).unwrap(), g);
        let a = pre_noise(&g, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = pre_noise(&g, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, g);
    }

    #[test]
    fn noiseless_aggregation_averages() {
        let layout = flat(&[0.0, 0.0]).layout().to_vec();
        let grads = PerExampleGrads::new(layout.clone(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let avg = aggregate_and_noise(&grads, 1.0, 0.0, 2, &mut rng).unwrap();
        assert_eq!(avg.values(), &[0.5, 0.5]);
        let single = PerExampleGrads::new(layout.clone(), vec![vec![0.25, -0.75]]).unwrap();
        let avg = aggregate_and_noise(&single, 1.0, 0.0, 1, &mut rng).unwrap();
        assert_eq!(avg.values(), &[0.25, -0.75]);
        let empty = PerExampleGrads::new(layout, vec![]).unwrap();
        assert!(aggregate_and_noise(&empty, 1.0, 0.0, 1, &mut rng).is_err());
    }

    #[test]
    fn sgld_noise_std_values() {
        assert_eq!(sgld_noise_std(0.5, 1.0).unwrap(), 1.0);
        assert!((sgld_noise_std(0.5, 0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(sgld_noise_std(0.0, 1.0).is_err());
        assert!(sgld_noise_std(0.1, -1.0).is_err());
        let sigma = 1.3;
        let lr = 0.07;
        let s = sgld_noise_std(lr, temperature_matching(sigma, lr)).unwrap();
        assert!((s - sigma).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation_and_decay() {
        let s = LrSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.rate(0), 0.5);
        assert!(s.rate(1) < s.rate(0));
        assert!(LrSchedule::Constant { lr: 1.0 }.validate().is_err());
        assert!(LrSchedule::Constant { lr: 0.0 }.validate().is_err());
        assert!(LrSchedule::PolynomialDecay {
            initial: 0.5,
            gamma: 1.0,
            scale: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_validation_per_mode() {
        assert!(DpConfig::none(0.1).validate(Mode::Sgd).is_ok());
        assert!(DpConfig::none(0.1).validate(Mode::DpSgd).is_err());
        assert!(DpConfig::dp_sgd(1.0, 1.0, 0.1).validate(Mode::DpSgd).is_ok());
        assert!(DpConfig::dp_sgd(1.0, 1.0, 0.1).validate(Mode::DpSgld).is_err());
        assert!(DpConfig::dp_sgld(1.0, 1.0, 0.1).validate(Mode::DpSgld).is_ok());
        assert!(DpConfig::dp_sgld(f64::INFINITY, 1.0, 0.1)
            .validate(Mode::DpSgld)
            .is_err());
        assert!(DpConfig::dp_sgd(1.0, 1.0, 0.0).validate(Mode::DpSgd).is_err());
        assert_eq!(DpConfig::dp_sgld(2.0, 1.0, 0.1).pre_noise_scale, 0.2);
    }

    #[test]
    fn plain_step_on_one_parameter() {
        // loss = ln 1 + (lambda / 2) * theta^2 with lambda = 2: gradient 2 * theta
        let model = ModelSpec::new(
            vec![1],
            vec![Layer::Dense {
                inputs: 1,
                outputs: 1,
                bias: false,
            }],
            1,
        )
        .unwrap();
        let params = model.zero_params().with_values(vec![1.0]).unwrap();
        let mut opt = Optimizer::new(
            Mode::Sgd,
            params,
            LrSchedule::Constant { lr: 0.1 },
            DpConfig::none(1.0),
            PriorSpec::Gaussian { precision: 2.0 },
            RngStreams::new(0),
        )
        .unwrap();
        let stats = opt.step(&model, &Tensor::zeros(vec![1, 1]), &[0]).unwrap();
        assert_eq!(stats.step, 0);
        assert!((opt.params().values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }
}
