//! Any-quantile probabilistic regression for tabular data.
//!
//! A single network `f(x, q)` is trained with the pinball loss at randomly
//! drawn quantile levels, so one model answers every conditional quantile of
//! the target. Observations are variable-length sets of `(feature id, value)`
//! pairs, encoded by a permutation-invariant prototype encoder; the quantile
//! level enters through FiLM modulation in the decoder.
//!
//! Module map:
//! - [`tensor`], [`tape`], [`params`]: dense kernels, reverse-mode gradients, Adam.
//! - [`model`]: embedding, encoder and decoder.
//! - [`loss`]: pinball loss, sample CRPS and point/calibration metrics.
//! - [`data`]: CSV ingestion, feature registry, splits, sampling and augmentation.
//! - [`synthetic`]: generators with closed-form conditional quantiles.
//! - [`trainer`], [`checkpoint`]: training loops, fine-tuning and persistence.
//! - [`interpret`]: confidence-interval feature importance and removal studies.
//! - [`evaluate`]: metric reports over dataset splits.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod interpret;
pub mod loss;
pub mod model;
pub mod normal;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{NiaqueError, Result};
pub use model::{FeatureRow, NiaqueConfig, NiaqueModel, QuantileBatchPrediction, QuantileGrid};
pub use params::{adam_step, AdamConfig, ParamStore};
pub use tape::{Segments, Tape, Var};
pub use tensor::Tensor;
