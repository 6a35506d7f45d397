//! Private training with Langevin dynamics.
//!
//! This crate trains small classifiers with plain SGD, DP-SGD and DP-SGLD
//! (DP-SGD whose post-clipping noise is the Langevin noise `sqrt(2 * lr_t * tau)`
//! of temperature-scaled SGLD, with optional pre-noising before clipping and a
//! decaying learning rate). It bundles everything needed to compare the three
//! procedures end to end:
//!
//! - [`engine`]: forward passes and per-example reverse-mode gradients for a
//!   small layer set (dense, conv2d, relu, 2x2 max-pool, flatten).
//! - [`optim`]: clipping, pre-noising, noisy aggregation, learning-rate
//!   schedules and the optimizer step for each mode.
//! - [`accountant`]: Gaussian differential privacy accounting with per-step
//!   noise, root-sum-of-squares composition and conversion to `(eps, delta)`.
//! - [`calibration`]: ECE, SCE, ACE, reliability curves, confidence
//!   histograms, accuracy and macro one-vs-rest AUC.
//! - [`data`]: MNIST IDX loading, Poisson subsampling and synthetic blobs.
//! - [`experiment`]: config parsing, budget-gated training runs, reports and
//!   comparison tables.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod calibration;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Layer, ModelSpec, ParamVector};
pub use tensor::Tensor;
