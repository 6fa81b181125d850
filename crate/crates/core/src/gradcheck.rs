//! Finite-difference verification of every parameter gradient of the
//! pinball training loss, over randomly drawn tiny networks and batches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NiaqueError, Result};
use crate::model::{FeatureRow, NiaqueConfig, NiaqueModel, QuantileGrid};
use crate::params::ParamId;
use crate::rng;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOptions {
    pub configs: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so exact zeros compare sanely.
    pub floor: f64,
    /// Minimum distance of every ReLU input and pinball residual from its kink.
    pub margin: f64,
    pub max_blocks: usize,
    pub max_layers: usize,
    pub max_latent: usize,
    pub max_features: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            configs: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            margin: 1e-3,
            max_blocks: 3,
            max_layers: 2,
            max_latent: 16,
            max_features: 6,
        }
    }
}

/// Outcome for one random configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub config: NiaqueConfig,
    pub rows: usize,
    pub max_features: usize,
    pub per_row_quantiles: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// A loss evaluation fixture: fixed rows, targets and levels.
pub struct Instance {
    pub rows: Vec<FeatureRow>,
    pub grid: QuantileGrid,
    pub targets: Vec<f64>,
}

impl Instance {
    /// Loss value plus the smallest ReLU-input and pinball-residual magnitudes.
    pub fn loss(&self, model: &NiaqueModel) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let pred = model.record_forward(&mut tape, &self.rows, &self.grid)?;
        let l = tape.pinball_mean(pred, &self.targets, self.grid.levels())?;
        let margin = tape.relu_margin().min(tape.pinball_margin());
        Ok((tape.value(l).data()[0], margin))
    }

    /// Analytic gradients, one vector per parameter.
    pub fn gradients(&self, model: &mut NiaqueModel) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let pred = model.record_forward(&mut tape, &self.rows, &self.grid)?;
        let l = tape.pinball_mean(pred, &self.targets, self.grid.levels())?;
        let params = model.params_mut();
        params.zero_grad();
        tape.backward(l, params)?;
        Ok(params.iter().map(|(_, e)| e.grad().data().to_vec()).collect())
    }
}

/// Compares analytic and central-difference gradients for every scalar
/// parameter. Returns `(max relative error, worst "name[i]", count)`.
pub fn compare(model: &mut NiaqueModel, inst: &Instance, opts: &GradcheckOptions) -> Result<(f64, String, usize)> {
    let analytic = inst.gradients(model)?;
    let ids: Vec<(ParamId, String)> = model.params().iter().map(|(id, e)| (id, e.name().to_string())).collect();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for ((id, name), grad) in ids.iter().zip(&analytic) {
        for (i, &a) in grad.iter().enumerate() {
            let orig = model.params().value(*id).data()[i];
            model.params_mut().value_mut(*id)[i] = orig + opts.step;
            let (up, _) = inst.loss(model)?;
            model.params_mut().value_mut(*id)[i] = orig - opts.step;
            let (down, _) = inst.loss(model)?;
            model.params_mut().value_mut(*id)[i] = orig;
            let n = (up - down) / (2.0 * opts.step);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel, format!("{name}[{i}]"));
            }
            checked += 1;
        }
    }
    Ok((worst.0, worst.1, checked))
}

fn random_config<R: Rng + ?Sized>(rng: &mut R, o: &GradcheckOptions) -> NiaqueConfig {
    NiaqueConfig {
        blocks: rng.random_range(1..=o.max_blocks),
        layers_per_block: rng.random_range(1..=o.max_layers),
        latent_dim: rng.random_range(2..=o.max_latent),
        input_embed_dim: rng.random_range(2..=6),
        hidden_width: rng.random_range(2..=o.max_latent),
        feature_vocab_capacity: 8,
        single_feature_ratio: 0.0,
        feature_dropout_rate: 0.0,
    }
}

fn random_instance<R: Rng + ?Sized>(rng: &mut R, o: &GradcheckOptions, vocab: usize) -> Result<Instance> {
    let n_rows = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let d = rng.random_range(1..=o.max_features.min(vocab));
        let ids = rand::seq::index::sample(rng, vocab, d).into_vec();
        let vals = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        rows.push(FeatureRow::new(ids, vals, None)?);
    }
    let levels: Vec<f64> = (0..n_rows * k).map(|_| rng.random_range(0.02..0.98)).collect();
    let targets = (0..n_rows * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok(Instance {
        rows,
        grid: QuantileGrid::from_flat(k, levels)?,
        targets,
    })
}

/// Perturbs every parameter so zero-initialised paths (FiLM, biases) are exercised.
fn jitter<R: Rng + ?Sized>(model: &mut NiaqueModel, rng: &mut R) {
    let noise = Normal::new(0.0, 0.2).expect("valid std");
    let ids: Vec<ParamId> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in model.params_mut().value_mut(id) {
            *v += noise.sample(rng);
        }
    }
}

/// Draws instances until every kink is at least `opts.margin` away.
fn well_conditioned(rng: &mut ChaCha8Rng, opts: &GradcheckOptions, config: &NiaqueConfig) -> Result<(NiaqueModel, Instance)> {
    for _ in 0..200 {
        let mut model = NiaqueModel::new(config.clone(), rng)?;
        jitter(&mut model, rng);
        let inst = random_instance(rng, opts, config.feature_vocab_capacity)?;
        let (_, margin) = inst.loss(&model)?;
        if margin >= opts.margin {
            return Ok((model, inst));
        }
    }
    Err(NiaqueError::InvalidArgument(
        "could not draw an instance away from ReLU/pinball kinks".into(),
    ))
}

/// Runs the finite-difference check over `opts.configs` random tiny configurations.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = rng::stream(opts.seed, "gradcheck");
    let mut cases = Vec::with_capacity(opts.configs);
    for _ in 0..opts.configs {
        let config = random_config(&mut rng, opts);
        let (mut model, inst) = well_conditioned(&mut rng, opts, &config)?;
        let (max_rel_err, worst, checked) = compare(&mut model, &inst, opts)?;
        cases.push(CaseResult {
            config,
            rows: inst.rows.len(),
            max_features: inst.rows.iter().map(FeatureRow::len).max().unwrap_or(0),
            per_row_quantiles: inst.grid.per_row_count(),
            checked,
            max_rel_err,
            worst,
        });
    }
    let max_rel_err = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        cases,
        max_rel_err,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_configs_pass() {
        let opts = GradcheckOptions {
            configs: 3,
            seed: 17,
            ..GradcheckOptions::default()
        };
        let r = run(&opts).unwrap();
        assert!(r.passed(), "{:?}", r.cases.iter().map(|c| (&c.worst, c.max_rel_err)).collect::<Vec<_>>());
        assert!(r.cases.iter().all(|c| c.checked == c.config.param_count()));
    }
}
