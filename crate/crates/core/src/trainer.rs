//! Pretraining and fine-tuning with per-row random quantile levels.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainerState};
use crate::data::{self, FeatureRegistry, RowPool, SplitDataset};
use crate::error::{NiaqueError, Result};
use crate::loss::format_sig6;
use crate::model::{FeatureRow, NiaqueConfig, NiaqueModel, QuantileGrid};
use crate::params::{adam_step, AdamConfig};
use crate::rng::{self, streams, RngState};
use crate::tape::Tape;

/// Rows per forward pass when scoring validation data.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Batch counts at which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_points: Vec<u64>,
    pub lr_drop_factor: f64,
    pub total_batches: u64,
    pub seed: u64,
    /// Quantile levels drawn per training row.
    pub quantiles_per_sample: usize,
    /// Fraction of the fine-tuning train split that is used.
    pub data_fraction: f64,
    /// Batches between validation events.
    pub val_interval: u64,
    /// Validation rows scored per event (a fixed seeded subset).
    pub val_max_rows: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 1e-3,
            lr_drop_points: vec![4_000, 6_000],
            lr_drop_factor: 10.0,
            total_batches: 7_000,
            seed: 0,
            quantiles_per_sample: 1,
            data_fraction: 1.0,
            val_interval: 500,
            val_max_rows: 4_096,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NiaqueError::Config(m));
        if self.batch_size == 0 || self.quantiles_per_sample == 0 {
            return bad("batch_size and quantiles_per_sample must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_drop_factor > 0.0) {
            return bad("lr_drop_factor must be positive".into());
        }
        if self.lr_drop_points.windows(2).any(|w| w[1] <= w[0]) {
            return bad("lr_drop_points must be strictly increasing".into());
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data_fraction {} not in (0, 1]", self.data_fraction));
        }
        if self.val_interval == 0 || self.val_max_rows == 0 {
            return bad("val_interval and val_max_rows must be positive".into());
        }
        Ok(())
    }

    /// Learning rate for the batch with 0-based index `batch`.
    pub fn lr_at(&self, batch: u64) -> f64 {
        let drops = self.lr_drop_points.iter().filter(|&&p| batch >= p).count();
        self.lr / self.lr_drop_factor.powi(drops as i32)
    }
}

/// Per-purpose random streams of a training run.
#[derive(Clone, Debug)]
pub struct TrainerRngs {
    pub data: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub quantiles: ChaCha8Rng,
}

impl TrainerRngs {
    pub fn from_seed(seed: u64) -> Self {
        TrainerRngs {
            data: rng::stream(seed, streams::DATA),
            dropout: rng::stream(seed, streams::DROPOUT),
            augment: rng::stream(seed, streams::AUGMENT),
            quantiles: rng::stream(seed, streams::QUANTILES),
        }
    }

    pub fn capture(&self) -> [RngState; 4] {
        [
            RngState::capture(&self.data),
            RngState::capture(&self.dropout),
            RngState::capture(&self.augment),
            RngState::capture(&self.quantiles),
        ]
    }

    pub fn restore(states: &[RngState; 4]) -> Result<Self> {
        Ok(TrainerRngs {
            data: states[0].restore()?,
            dropout: states[1].restore()?,
            augment: states[2].restore()?,
            quantiles: states[3].restore()?,
        })
    }
}

/// Model, optimizer state and random streams of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: NiaqueModel,
    pub config: TrainConfig,
    pub rngs: TrainerRngs,
    /// Batches completed.
    pub batch: u64,
}

impl Trainer {
    pub fn new(model: NiaqueModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rngs = TrainerRngs::from_seed(config.seed);
        Ok(Trainer {
            model,
            config,
            rngs,
            batch: 0,
        })
    }

    /// Fresh model initialised from the `init` stream of `config.seed`.
    pub fn fresh(model_config: NiaqueConfig, config: TrainConfig) -> Result<Self> {
        let model = NiaqueModel::new(model_config, &mut rng::stream(config.seed, streams::INIT))?;
        Self::new(model, config)
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.batch)
    }

    /// Applies dropout and augmentation, draws `K` levels per row, takes one
    /// Adam step on the mean pinball loss and returns that loss.
    pub fn train_step(&mut self, mut batch: Vec<FeatureRow>) -> Result<f64> {
        if batch.is_empty() {
            return Err(NiaqueError::EmptyInput("training batch"));
        }
        let mc = self.model.config();
        let (dp, ratio) = (mc.feature_dropout_rate, mc.single_feature_ratio);
        data::feature_dropout_batch(&mut batch, dp, &mut self.rngs.dropout);
        data::single_feature_augment(&mut batch, ratio, &mut self.rngs.augment);

        let k = self.config.quantiles_per_sample;
        let levels: Vec<f64> = (0..batch.len() * k)
            .map(|_| open_unit(&mut self.rngs.quantiles))
            .collect();
        let targets = batch_targets(&batch, k)?;
        let grid = QuantileGrid::from_flat(k, levels)?;

        let mut tape = Tape::new();
        let pred = self.model.record_forward(&mut tape, &batch, &grid)?;
        let loss_var = tape.pinball_mean(pred, &targets, grid.levels())?;
        let loss = tape.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(NiaqueError::NonFinite(format!(
                "training loss at batch {} (lr {})",
                self.batch,
                self.lr()
            )));
        }
        let lr = self.lr();
        let params = self.model.params_mut();
        params.zero_grad();
        tape.backward(loss_var, params)?;
        let a = self.config.adam;
        adam_step(params, lr, a.beta1, a.beta2, a.eps).map_err(|e| match e {
            NiaqueError::NonFiniteGrad(p) => {
                NiaqueError::NonFiniteGrad(format!("{p} at batch {} (loss {loss})", self.batch))
            }
            other => other,
        })?;
        self.batch += 1;
        Ok(loss)
    }

    /// Samples one batch from `pool` and trains on it.
    pub fn step(&mut self, pool: &RowPool<'_>) -> Result<f64> {
        let batch = data::sample_batch(pool, self.config.batch_size, &mut self.rngs.data);
        self.train_step(batch)
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            rngs: self.rngs.capture(),
            batch: self.batch,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let state = ckpt
            .trainer
            .as_ref()
            .ok_or_else(|| NiaqueError::Format("checkpoint carries no trainer state".into()))?;
        state.config.validate()?;
        Ok(Trainer {
            model: ckpt.model.clone(),
            config: state.config.clone(),
            rngs: TrainerRngs::restore(&state.rngs)?,
            batch: state.batch,
        })
    }

    pub fn checkpoint(&self, registry: &FeatureRegistry, datasets: &[SplitDataset], val_pinball: Option<f64>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            registry: registry.clone(),
            datasets: datasets.iter().map(|d| d.meta.clone()).collect(),
            trainer: Some(self.state()),
            val_pinball,
        }
    }
}

/// Uniform draw from the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let q: f64 = rng.random();
        if q > 0.0 {
            return q;
        }
    }
}

fn batch_targets(batch: &[FeatureRow], k: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len() * k);
    for r in batch {
        let y = r
            .target()
            .ok_or_else(|| NiaqueError::InvalidRow("training row without target".into()))?;
        out.extend(std::iter::repeat_n(y, k));
    }
    Ok(out)
}

/// Fixed validation sample: a seeded subset of rows, each paired with one level.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    rows: Vec<FeatureRow>,
    levels: Vec<f64>,
}

impl ValidationSet {
    pub fn new(rows: Vec<FeatureRow>, max_rows: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, streams::VALIDATION);
        let rows = if rows.len() > max_rows {
            let mut idx = index::sample(&mut rng, rows.len(), max_rows).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| rows[i].clone()).collect()
        } else {
            rows
        };
        let levels = rows.iter().map(|_| open_unit(&mut rng)).collect();
        ValidationSet { rows, levels }
    }

    pub fn of_datasets(datasets: &[SplitDataset], max_rows: usize, seed: u64) -> Self {
        Self::new(datasets.iter().flat_map(|d| d.val.iter().cloned()).collect(), max_rows, seed)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean pinball loss of `model` over the set.
    pub fn pinball(&self, model: &NiaqueModel) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(NiaqueError::EmptyInput("validation set"));
        }
        let mut total = 0.0;
        for (rows, levels) in self.rows.chunks(EVAL_CHUNK).zip(self.levels.chunks(EVAL_CHUNK)) {
            let grid = QuantileGrid::from_flat(1, levels.to_vec())?;
            let pred = model.forward(rows, &grid)?;
            for ((r, &q), &yhat) in rows.iter().zip(levels).zip(pred.values.data()) {
                let y = r.target().ok_or_else(|| NiaqueError::InvalidRow("validation row without target".into()))?;
                total += crate::loss::pinball(y, yhat, q)?;
            }
        }
        Ok(total / self.rows.len() as f64)
    }
}

/// One validation event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub batch: u64,
    pub lr: f64,
    pub train_pinball: f64,
    pub val_pinball: f64,
}

impl LogEntry {
    pub fn line(&self) -> String {
        format!(
            "batch={} lr={} train_pinball={} val_pinball={}",
            self.batch,
            format_sig6(self.lr),
            format_sig6(self.train_pinball),
            format_sig6(self.val_pinball)
        )
    }
}

pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub history: Vec<LogEntry>,
}

/// Runs `trainer` until `config.total_batches`, validating every
/// `val_interval` batches and at the end. Writes one log line per event.
pub fn fit(
    trainer: &mut Trainer,
    train: &RowPool<'_>,
    val: &ValidationSet,
    registry: &FeatureRegistry,
    datasets: &[SplitDataset],
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut acc = 0.0;
    let mut n_acc = 0u64;
    while trainer.batch < trainer.config.total_batches {
        let lr = trainer.lr();
        acc += trainer.step(train)?;
        n_acc += 1;
        let done = trainer.batch == trainer.config.total_batches;
        if trainer.batch % trainer.config.val_interval == 0 || done {
            let v = val.pinball(&trainer.model)?;
            let entry = LogEntry {
                batch: trainer.batch,
                lr,
                train_pinball: acc / n_acc as f64,
                val_pinball: v,
            };
            writeln!(log, "{}", entry.line()).map_err(|e| NiaqueError::io("training log", e))?;
            log::debug!("{}", entry.line());
            history.push(entry);
            acc = 0.0;
            n_acc = 0;
            if best.as_ref().is_none_or(|b| b.val_pinball.is_some_and(|bv| v < bv)) {
                best = Some(trainer.checkpoint(registry, datasets, Some(v)));
            }
        }
    }
    let last_val = history.last().map(|e| e.val_pinball);
    let last = trainer.checkpoint(registry, datasets, last_val);
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { last, best, history })
}

/// Trains a fresh model on the union of the datasets' train splits.
pub fn pretrain(
    datasets: &[SplitDataset],
    registry: &FeatureRegistry,
    model_config: NiaqueConfig,
    config: TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if datasets.is_empty() {
        return Err(NiaqueError::EmptyInput("pretraining datasets"));
    }
    if registry.len() > model_config.feature_vocab_capacity {
        return Err(NiaqueError::ResizeRequired {
            needed: registry.len(),
            capacity: model_config.feature_vocab_capacity,
        });
    }
    let val = ValidationSet::of_datasets(datasets, config.val_max_rows, config.seed);
    let pool = RowPool::train_of(datasets)?;
    let mut trainer = Trainer::fresh(model_config, config)?;
    fit(&mut trainer, &pool, &val, registry, datasets, log)
}

/// Fine-tuning knobs beyond the base training config.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOptions {
    /// Multiplier applied to `config.lr`.
    pub lr_scale: f64,
    /// Grow the embedding table instead of failing when new IDs do not fit.
    pub auto_resize: bool,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            lr_scale: 0.1,
            auto_resize: false,
        }
    }
}

/// Continues training a pretrained checkpoint on `dataset`, which must have
/// been ingested against a registry extending `ckpt.registry`. Embedding rows of
/// IDs not present in the checkpoint are redrawn, the optimizer is reset and
/// training uses a seeded `data_fraction` subsample of the train split.
pub fn finetune(
    ckpt: &Checkpoint,
    registry: &FeatureRegistry,
    dataset: &SplitDataset,
    config: TrainConfig,
    opts: &FinetuneOptions,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !ckpt.registry.is_prefix_of(registry) {
        return Err(NiaqueError::InvalidArgument(
            "fine-tuning registry does not extend the checkpoint registry".into(),
        ));
    }
    let mut model = ckpt.model.clone();
    let capacity = model.config().feature_vocab_capacity;
    let mut init = rng::stream(config.seed, "finetune-init");
    if registry.len() > capacity {
        if !opts.auto_resize {
            return Err(NiaqueError::ResizeRequired {
                needed: registry.len(),
                capacity,
            });
        }
        model.resize_vocab(registry.len(), &mut init)?;
    }
    let new_ids: Vec<usize> = (ckpt.registry.len()..registry.len()).collect();
    model.reinit_embedding_rows(&new_ids, &mut init)?;
    model.params_mut().reset_optimizer();

    let train_rows = data::subsample(
        &dataset.train,
        config.data_fraction,
        &mut rng::stream(config.seed, "subsample"),
    );
    let pool = RowPool::new(vec![&train_rows])?;
    let val = ValidationSet::new(dataset.val.clone(), config.val_max_rows, config.seed);
    let mut scaled = config;
    scaled.lr *= opts.lr_scale;
    let mut trainer = Trainer::new(model, scaled)?;
    let mut out = fit(&mut trainer, &pool, &val, registry, std::slice::from_ref(dataset), log)?;
    // Keep the pretraining datasets' normalisation alongside the new one.
    for c in [&mut out.last, &mut out.best] {
        let mut metas = ckpt.datasets.clone();
        metas.retain(|m| m.name != dataset.meta.name);
        metas.push(dataset.meta.clone());
        c.datasets = metas;
    }
    Ok(out)
}

/// Baseline for [`finetune`]: a fresh model trained at the full learning rate
/// on the same seeded `data_fraction` subsample, with the same batch budget.
pub fn scratch(
    dataset: &SplitDataset,
    registry: &FeatureRegistry,
    model_config: NiaqueConfig,
    config: TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_rows = data::subsample(
        &dataset.train,
        config.data_fraction,
        &mut rng::stream(config.seed, "subsample"),
    );
    let pool = RowPool::new(vec![&train_rows])?;
    let val = ValidationSet::new(dataset.val.clone(), config.val_max_rows, config.seed);
    let mut trainer = Trainer::fresh(model_config, config)?;
    fit(&mut trainer, &pool, &val, registry, std::slice::from_ref(dataset), log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticTask;

    fn small_model() -> NiaqueConfig {
        NiaqueConfig {
            latent_dim: 16,
            hidden_width: 16,
            input_embed_dim: 4,
            feature_vocab_capacity: 16,
            ..NiaqueConfig::default()
        }
    }

    #[test]
    fn lr_schedule_steps() {
        let c = TrainConfig {
            lr: 1e-4,
            lr_drop_points: vec![100, 200],
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(99), 1e-4);
        assert!((c.lr_at(100) - 1e-5).abs() < 1e-20);
        assert!((c.lr_at(250) - 1e-6).abs() < 1e-21);
        let bad = TrainConfig {
            lr_drop_points: vec![5, 5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fresh_loss_in_range_and_deterministic() {
        let mut reg = FeatureRegistry::new();
        let ds = SyntheticTask::default().generate("t", 400, 1, &mut reg).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::fresh(small_model(), cfg.clone()).unwrap();
            let pool = RowPool::new(vec![&ds.train]).unwrap();
            (0..5).map(|_| t.step(&pool).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert!(a[0] > 0.0 && a[0] < 10.0);
        assert_eq!(a, run());
    }

    #[test]
    fn row_order_within_batch_leaves_loss_unchanged() {
        let mut reg = FeatureRegistry::new();
        let ds = SyntheticTask::default().generate("t", 100, 2, &mut reg).unwrap();
        let model = NiaqueModel::new(small_model(), &mut rng::stream(0, "init")).unwrap();
        let rows: Vec<FeatureRow> = ds.train[..16].to_vec();
        let levels: Vec<f64> = (0..16).map(|i| (i as f64 + 0.5) / 16.0).collect();
        let loss = |rows: &[FeatureRow], levels: &[f64]| {
            let grid = QuantileGrid::from_flat(1, levels.to_vec()).unwrap();
            let mut tape = Tape::new();
            let p = model.record_forward(&mut tape, rows, &grid).unwrap();
            let t: Vec<f64> = rows.iter().map(|r| r.target().unwrap()).collect();
            let l = tape.pinball_mean(p, &t, levels).unwrap();
            tape.value(l).data()[0]
        };
        let base = loss(&rows, &levels);
        let mut rr = rows.clone();
        let mut ll = levels.clone();
        rr.reverse();
        ll.reverse();
        assert!((loss(&rr, &ll) - base).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut t = Trainer::fresh(small_model(), TrainConfig::default()).unwrap();
        assert!(t.train_step(vec![]).is_err());
    }
}
