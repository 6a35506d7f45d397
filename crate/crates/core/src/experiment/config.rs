//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! See `ExperimentConfig::KEYS` for the accepted keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::accountant::PrivacyBudget;
use crate::engine::PriorSpec;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::optim::{DpConfig, LrSchedule, Mode};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetChoice {
    Mnist {
        dir: PathBuf,
        /// Train on the first `n` shuffled training examples; `None` = all.
        subset: Option<usize>,
    },
    Blobs {
        classes: usize,
        dim: usize,
        train: usize,
        test: usize,
        separation: f64,
    },
}

impl DatasetChoice {
    /// Identifier written to reports; runs are only comparable when equal.
    pub fn label(&self) -> String {
        match self {
            DatasetChoice::Mnist { subset, .. } => match subset {
                Some(n) => format!("mnist[train={n}]"),
                None => "mnist".into(),
            },
            DatasetChoice::Blobs {
                classes,
                dim,
                train,
                test,
                separation,
            } => format!("blobs[k={classes},d={dim},n={train}/{test},sep={separation}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Linear,
    Mlp { hidden: Vec<usize> },
    Cnn,
    Custom { layers: String },
}

impl ModelChoice {
    pub fn build(&self, input_shape: &[usize], classes: usize) -> Result<ModelSpec> {
        let flat: usize = input_shape.iter().product();
        match self {
            ModelChoice::Linear => {
                let mut layers = Vec::new();
                if input_shape.len() > 1 {
                    layers.push(crate::model::Layer::Flatten);
                }
                layers.push(crate::model::Layer::Dense {
                    inputs: flat,
                    outputs: classes,
                    bias: true,
                });
                ModelSpec::new(input_shape.to_vec(), layers, classes)
            }
            ModelChoice::Mlp { hidden } => ModelSpec::mlp(input_shape.to_vec(), hidden, classes),
            ModelChoice::Cnn => {
                if input_shape != [1, 28, 28] || classes != 10 {
                    return Err(Error::Config(format!(
                        "the cnn preset expects 1x28x28 inputs and 10 classes, got {input_shape:?} / {classes}"
                    )));
                }
                Ok(ModelSpec::mnist_cnn())
            }
            ModelChoice::Custom { layers } => ModelSpec::parse(input_shape.to_vec(), layers, classes),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetChoice,
    pub model: ModelChoice,
    pub mode: Mode,
    /// Expected Poisson batch size `m`.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub clip_bound: f64,
    pub noise_multiplier: Option<f64>,
    pub temperature: Option<f64>,
    /// `None` means the default `0.1 * clip_bound`.
    pub pre_noise: Option<f64>,
    pub prior: PriorSpec,
    pub budget: Option<PrivacyBudget>,
    pub seed: u64,
    pub max_steps: u64,
    pub ece_bins: usize,
    pub ace_ranges: usize,
    /// Evaluate on the test split every this many steps; 0 = only at halt.
    pub eval_every: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetChoice::Mnist {
                dir: PathBuf::from("data/mnist"),
                subset: None,
            },
            model: ModelChoice::Mlp { hidden: vec![128] },
            mode: Mode::Sgd,
            batch_size: 256,
            schedule: LrSchedule::default(),
            clip_bound: 1.0,
            noise_multiplier: None,
            temperature: None,
            pre_noise: None,
            prior: PriorSpec::Flat,
            budget: None,
            seed: 0,
            max_steps: 1000,
            ece_bins: 15,
            ace_ranges: 15,
            eval_every: 0,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "mnist_dir",
        "subset",
        "blobs_classes",
        "blobs_dim",
        "blobs_train",
        "blobs_test",
        "blobs_separation",
        "model",
        "hidden",
        "layers",
        "prior_precision",
        "mode",
        "batch_size",
        "lr_schedule",
        "lr",
        "lr_decay_gamma",
        "lr_decay_scale",
        "clip_bound",
        "noise_multiplier",
        "temperature",
        "pre_noise",
        "epsilon",
        "delta",
        "seed",
        "max_steps",
        "ece_bins",
        "ace_ranges",
        "eval_every",
        "out_dir",
    ];

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !Self::KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if kv.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
            kv.push((k, v));
        }
        let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Config(format!("`{key}`: {e}"))))
                .transpose()
        };
        let int = |key: &str| -> Result<Option<u64>> {
            get(key)
                .map(|v| v.parse::<u64>().map_err(|e| Error::Config(format!("`{key}`: {e}"))))
                .transpose()
        };

        let d = Self::default();
        let dataset = match get("dataset").unwrap_or("mnist") {
            "mnist" => DatasetChoice::Mnist {
                dir: get("mnist_dir").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from),
                subset: int("subset")?.filter(|&n| n > 0).map(|n| n as usize),
            },
            kind @ ("blobs" | "blobs-hard") => DatasetChoice::Blobs {
                classes: int("blobs_classes")?.unwrap_or(4) as usize,
                dim: int("blobs_dim")?.unwrap_or(10) as usize,
                train: int("blobs_train")?.unwrap_or(2000) as usize,
                test: int("blobs_test")?.unwrap_or(1000) as usize,
                separation: num("blobs_separation")?.unwrap_or(if kind == "blobs" { 10.0 } else { 1.5 }),
            },
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        };
        let model = match get("model").unwrap_or("mlp") {
            "linear" => ModelChoice::Linear,
            "mlp" => ModelChoice::Mlp {
                hidden: match get("hidden") {
                    None => vec![128],
                    Some(h) => h
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse().map_err(|e| Error::Config(format!("`hidden`: {e}"))))
                        .collect::<Result<_>>()?,
                },
            },
            "cnn" => ModelChoice::Cnn,
            "custom" => ModelChoice::Custom {
                layers: get("layers")
                    .ok_or_else(|| Error::Config("model = custom needs `layers`".into()))?
                    .to_string(),
            },
            other => return Err(Error::Config(format!("unknown model `{other}`"))),
        };
        let prior = match num("prior_precision")? {
            None => PriorSpec::Flat,
            Some(0.0) => PriorSpec::Flat,
            Some(l) => PriorSpec::Gaussian { precision: l },
        };
        let mode: Mode = get("mode").unwrap_or("sgd").parse()?;
        let lr = num("lr")?;
        let schedule = match get("lr_schedule").unwrap_or("polynomial") {
            "constant" => LrSchedule::Constant { lr: lr.unwrap_or(0.1) },
            "polynomial" => {
                let LrSchedule::PolynomialDecay { initial, gamma, scale } = LrSchedule::default() else {
                    unreachable!()
                };
                LrSchedule::PolynomialDecay {
                    initial: lr.unwrap_or(initial),
                    gamma: num("lr_decay_gamma")?.unwrap_or(gamma),
                    scale: num("lr_decay_scale")?.unwrap_or(scale),
                }
            }
            other => return Err(Error::Config(format!("unknown lr_schedule `{other}`"))),
        };
        let budget = match (num("epsilon")?, num("delta")?) {
            (Some(e), Some(dl)) => Some(PrivacyBudget::new(e, dl).map_err(|e| Error::Config(e.to_string()))?),
            (None, None) => None,
            _ => return Err(Error::Config("`epsilon` and `delta` go together".into())),
        };
        let cfg = Self {
            dataset,
            model,
            mode,
            batch_size: int("batch_size")?.map_or(d.batch_size, |v| v as usize),
            schedule,
            clip_bound: num("clip_bound")?.unwrap_or(if mode.is_private() { 1.0 } else { f64::INFINITY }),
            noise_multiplier: num("noise_multiplier")?,
            temperature: num("temperature")?,
            pre_noise: num("pre_noise")?,
            prior,
            budget,
            seed: int("seed")?.unwrap_or(d.seed),
            max_steps: int("max_steps")?.unwrap_or(d.max_steps),
            ece_bins: int("ece_bins")?.map_or(d.ece_bins, |v| v as usize),
            ace_ranges: int("ace_ranges")?.map_or(d.ace_ranges, |v| v as usize),
            eval_every: int("eval_every")?.unwrap_or(0),
            out_dir: get("out_dir").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.ece_bins == 0 || self.ace_ranges == 0 {
            return fail("ece_bins and ace_ranges must be positive".into());
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.mode.is_private() && self.budget.is_none() {
            return fail(format!("mode {} needs `epsilon` and `delta`", self.mode));
        }
        // sampling probability is only known once the dataset is loaded
        self.dp_config(0.5)
            .validate(self.mode)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dp_config(&self, sampling_probability: f64) -> DpConfig {
        let clip = self.clip_bound;
        DpConfig {
            clip_bound: clip,
            pre_noise_scale: match self.mode {
                Mode::DpSgld => self.pre_noise.unwrap_or(0.1 * clip),
                _ => 0.0,
            },
            temperature: self.temperature,
            noise_multiplier: self.noise_multiplier,
            sampling_probability,
        }
    }

    /// Canonical `key = value` text; parsing it yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.dataset {
            DatasetChoice::Mnist { dir, subset } => {
                put("dataset", "mnist".into());
                put("mnist_dir", dir.display().to_string());
                if let Some(n) = subset {
                    put("subset", n.to_string());
                }
            }
            DatasetChoice::Blobs {
                classes,
                dim,
                train,
                test,
                separation,
            } => {
                put("dataset", "blobs".into());
                put("blobs_classes", classes.to_string());
                put("blobs_dim", dim.to_string());
                put("blobs_train", train.to_string());
                put("blobs_test", test.to_string());
                put("blobs_separation", separation.to_string());
            }
        }
        match &self.model {
            ModelChoice::Linear => put("model", "linear".into()),
            ModelChoice::Mlp { hidden } => {
                put("model", "mlp".into());
                put(
                    "hidden",
                    hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
                );
            }
            ModelChoice::Cnn => put("model", "cnn".into()),
            ModelChoice::Custom { layers } => {
                put("model", "custom".into());
                put("layers", layers.clone());
            }
        }
        if let PriorSpec::Gaussian { precision } = self.prior {
            put("prior_precision", precision.to_string());
        }
        put("mode", self.mode.to_string());
        put("batch_size", self.batch_size.to_string());
        match self.schedule {
            LrSchedule::Constant { lr } => {
                put("lr_schedule", "constant".into());
                put("lr", lr.to_string());
            }
            LrSchedule::PolynomialDecay { initial, gamma, scale } => {
                put("lr_schedule", "polynomial".into());
                put("lr", initial.to_string());
                put("lr_decay_gamma", gamma.to_string());
                put("lr_decay_scale", scale.to_string());
            }
        }
        put("clip_bound", self.clip_bound.to_string());
        if let Some(v) = self.noise_multiplier {
            put("noise_multiplier", v.to_string());
        }
        if let Some(v) = self.temperature {
            put("temperature", v.to_string());
        }
        if let Some(v) = self.pre_noise {
            put("pre_noise", v.to_string());
        }
        if let Some(b) = self.budget {
            put("epsilon", b.epsilon().to_string());
            put("delta", b.delta().to_string());
        }
        put("seed", self.seed.to_string());
        put("max_steps", self.max_steps.to_string());
        put("ece_bins", self.ece_bins.to_string());
        put("ace_ranges", self.ace_ranges.to_string());
        put("eval_every", self.eval_every.to_string());
        if let Some(dir) = &self.out_dir {
            put("out_dir", dir.display().to_string());
        }
        s
    }
}
