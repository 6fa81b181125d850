//! Metric reports over dataset splits, on the normalised `[0, 10]` target scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Split, SplitDataset};
use crate::error::{NiaqueError, Result};
use crate::loss::{self, MetricReport};
use crate::model::{FeatureRow, NiaqueModel, QuantileGrid};
use crate::rng::{self, streams};
use crate::tensor::Tensor;
use crate::trainer::open_unit;

const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Random levels used for the sample CRPS.
    pub n_quantiles: usize,
    pub seed: u64,
    /// Central interval levels (percent) whose coverage is reported.
    pub coverage_levels: Vec<u32>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_quantiles: 200,
            seed: 0,
            coverage_levels: vec![95],
        }
    }
}

/// `n` levels uniform on (0, 1) from the evaluation stream of `seed`, shared
/// by every dataset.
pub fn evaluation_quantiles(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, streams::EVALUATION);
    (0..n).map(|_| open_unit(&mut r)).collect()
}

/// Predictions for `rows` at `levels`, `rows × levels` in one tensor.
pub fn predict(model: &NiaqueModel, rows: &[FeatureRow], levels: &[f64]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * levels.len());
    for chunk in rows.chunks(CHUNK) {
        let grid = QuantileGrid::shared(levels, chunk.len())?;
        data.extend_from_slice(model.forward(chunk, &grid)?.values.data());
    }
    Tensor::matrix(rows.len(), levels.len(), data)
}

/// Raw ingredients of the metrics for one dataset.
#[derive(Clone, Debug)]
pub struct Scored {
    pub y: Vec<f64>,
    pub median: Vec<f64>,
    /// Per coverage level: (low, high) predictions.
    pub intervals: BTreeMap<u32, (Vec<f64>, Vec<f64>)>,
    pub crps_terms: Vec<f64>,
}

fn score(model: &NiaqueModel, rows: &[FeatureRow], opts: &EvalOptions, qs: &[f64]) -> Result<Scored> {
    let mut levels = qs.to_vec();
    levels.push(0.5);
    for &c in &opts.coverage_levels {
        let tail = (1.0 - f64::from(c) / 100.0) / 2.0;
        levels.push(tail);
        levels.push(1.0 - tail);
    }
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r.target().ok_or_else(|| NiaqueError::InvalidRow("evaluation row without target".into())))
        .collect::<Result<_>>()?;
    let pred = predict(model, rows, &levels)?;
    let q = qs.len();
    let mut crps_terms = Vec::with_capacity(rows.len());
    for (i, &yi) in y.iter().enumerate() {
        let row = &pred.row(i)[..q];
        let mut s = 0.0;
        for (&yh, &l) in row.iter().zip(qs) {
            s += loss::pinball(yi, yh, l)?;
        }
        crps_terms.push(2.0 * s / q as f64);
    }
    let median = (0..rows.len()).map(|i| pred.at(i, q)).collect();
    let mut intervals = BTreeMap::new();
    for (k, &c) in opts.coverage_levels.iter().enumerate() {
        let lo = (0..rows.len()).map(|i| pred.at(i, q + 1 + 2 * k)).collect();
        let hi = (0..rows.len()).map(|i| pred.at(i, q + 2 + 2 * k)).collect();
        intervals.insert(c, (lo, hi));
    }
    Ok(Scored {
        y,
        median,
        intervals,
        crps_terms,
    })
}

fn report(s: &Scored) -> Result<MetricReport> {
    let point = loss::point_metrics(&s.y, &s.median)?;
    let crps = s.crps_terms.iter().sum::<f64>() / s.crps_terms.len() as f64;
    let cov = s
        .intervals
        .iter()
        .map(|(&c, (lo, hi))| (c, loss::coverage(&s.y, lo, hi)))
        .collect();
    Ok(MetricReport::from_parts(point, crps, cov))
}

#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub per_dataset: Vec<(String, MetricReport)>,
    /// Sample-level aggregate over the union of rows.
    pub micro: MetricReport,
    /// Unweighted mean of the per-dataset reports.
    pub macro_avg: MetricReport,
    pub n_quantiles: usize,
    pub seed: u64,
    pub rows: usize,
}

impl EvaluationReport {
    /// `name=value` lines: micro metrics under their plain names (and with a
    /// `micro_` prefix), `macro_*`, then `<dataset>.<metric>`.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("quantiles={}\nquantile_seed={}\nrows={}\n", self.n_quantiles, self.seed, self.rows));
        out.push_str(&self.micro.to_record(""));
        out.push_str(&self.micro.to_record("micro_"));
        out.push_str(&self.macro_avg.to_record("macro_"));
        for (name, r) in &self.per_dataset {
            out.push_str(&r.to_record(&format!("{name}.")));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.micro.entries().into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

/// Evaluates `model` on one split of every dataset.
pub fn evaluate(model: &NiaqueModel, datasets: &[SplitDataset], split: Split, opts: &EvalOptions) -> Result<EvaluationReport> {
    if opts.n_quantiles == 0 {
        return Err(NiaqueError::InvalidArgument("need at least one evaluation quantile".into()));
    }
    let qs = evaluation_quantiles(opts.n_quantiles, opts.seed);
    let mut per_dataset = Vec::new();
    let mut all: Option<Scored> = None;
    for ds in datasets {
        let rows = ds.split(split);
        if rows.is_empty() {
            log::warn!("dataset `{}` has no {split:?} rows; skipped", ds.meta.name);
            continue;
        }
        let s = score(model, rows, opts, &qs)?;
        per_dataset.push((ds.meta.name.clone(), report(&s)?));
        match &mut all {
            None => all = Some(s),
            Some(a) => {
                a.y.extend(s.y);
                a.median.extend(s.median);
                a.crps_terms.extend(s.crps_terms);
                for (c, (lo, hi)) in s.intervals {
                    let e = a.intervals.get_mut(&c).expect("same levels");
                    e.0.extend(lo);
                    e.1.extend(hi);
                }
            }
        }
    }
    let all = all.ok_or(NiaqueError::EmptyInput("evaluation rows"))?;
    let reports: Vec<MetricReport> = per_dataset.iter().map(|(_, r)| r.clone()).collect();
    Ok(EvaluationReport {
        micro: report(&all)?,
        macro_avg: MetricReport::mean(&reports).expect("at least one dataset"),
        per_dataset,
        n_quantiles: opts.n_quantiles,
        seed: opts.seed,
        rows: all.y.len(),
    })
}
