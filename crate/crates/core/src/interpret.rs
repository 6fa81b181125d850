//! Feature importance from single-feature predictive intervals, and the
//! feature-removal accuracy study used to validate it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{NiaqueError, Result};
use crate::evaluate::predict;
use crate::loss::format_sig6;
use crate::model::{FeatureRow, NiaqueModel};

/// Mean width, in target units, of the `1 − alpha` interval predicted from
/// feature `feature_id` alone, averaged over the validation rows that carry it.
pub fn marginal_ci(model: &NiaqueModel, dataset: &SplitDataset, feature_id: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NiaqueError::QuantileDomain(alpha));
    }
    if model.config().single_feature_ratio == 0.0 {
        log::warn!("model trained without single-feature rows; marginal intervals are unreliable");
    }
    let singles: Vec<FeatureRow> = dataset
        .val
        .iter()
        .filter_map(|r| r.value_of(feature_id).map(|v| FeatureRow::new(vec![feature_id], vec![v], None)))
        .collect::<Result<_>>()?;
    if singles.is_empty() {
        return Err(NiaqueError::FeatureAbsent(feature_id));
    }
    let pred = predict(model, &singles, &[alpha / 2.0, 1.0 - alpha / 2.0])?;
    let width: f64 = (0..singles.len()).map(|i| pred.at(i, 1) - pred.at(i, 0)).sum::<f64>() / singles.len() as f64;
    Ok(width / dataset.meta.scale())
}

/// Inverse-width weights normalised to sum to one.
pub fn normalized_weights(ci_widths: &[f64], ids: &[usize]) -> Result<Vec<f64>> {
    let bad: Vec<usize> = ids
        .iter()
        .zip(ci_widths)
        .filter(|(_, &w)| !(w > 0.0 && w.is_finite()))
        .map(|(&id, _)| id)
        .collect();
    if !bad.is_empty() {
        return Err(NiaqueError::DegenerateModel(bad));
    }
    let inv: Vec<f64> = ci_widths.iter().map(|w| 1.0 / w).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature_id: usize,
    pub dataset: String,
    pub column: String,
    pub ci_width: f64,
    pub weight: f64,
}

/// Per-feature interval widths and weights, most important first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn ranking(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.feature_id).collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature_id", "dataset", "column", "ci_width", "weight"])?;
        for e in &self.entries {
            wtr.write_record([
                e.feature_id.to_string(),
                e.dataset.clone(),
                e.column.clone(),
                format_sig6(e.ci_width),
                format_sig6(e.weight),
            ])?;
        }
        wtr.flush().map_err(|e| NiaqueError::io("importance csv", e))?;
        Ok(())
    }
}

/// Importance weights of every feature of `dataset`.
pub fn importance_weights(model: &NiaqueModel, dataset: &SplitDataset, alpha: f64) -> Result<ImportanceReport> {
    let ids = dataset.meta.feature_ids();
    let widths = ids
        .iter()
        .map(|&id| marginal_ci(model, dataset, id, alpha))
        .collect::<Result<Vec<_>>>()?;
    let weights = normalized_weights(&widths, &ids)?;
    let mut entries: Vec<ImportanceEntry> = dataset
        .meta
        .columns
        .iter()
        .zip(widths.into_iter().zip(weights))
        .map(|(c, (ci_width, weight))| ImportanceEntry {
            feature_id: c.feature_id,
            dataset: dataset.meta.name.clone(),
            column: c.name.clone(),
            ci_width,
            weight,
        })
        .collect();
    entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.feature_id.cmp(&b.feature_id)));
    Ok(ImportanceReport { entries })
}

/// Median-prediction AAD on the test split, in target units.
pub fn median_aad(model: &NiaqueModel, dataset: &SplitDataset, rows: &[FeatureRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(NiaqueError::EmptyInput("test rows"));
    }
    let pred = predict(model, rows, &[0.5])?;
    let mut total = 0.0;
    for (r, &yhat) in rows.iter().zip(pred.data()) {
        let y = r
            .target()
            .ok_or_else(|| NiaqueError::InvalidRow("test row without target".into()))?;
        total += (y - yhat).abs();
    }
    Ok(total / rows.len() as f64 / dataset.meta.scale())
}

/// Change in test AAD after removing the `k` highest (`from_top`) or lowest
/// weighted features from every row.
pub fn removal_response(
    model: &NiaqueModel,
    dataset: &SplitDataset,
    report: &ImportanceReport,
    from_top: bool,
    k: usize,
) -> Result<f64> {
    let n = report.entries.len();
    if k >= n.max(1) {
        return Err(NiaqueError::InvalidArgument(format!("cannot remove {k} of {n} features")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let ranking = report.ranking();
    let removed: Vec<usize> = if from_top {
        ranking[..k].to_vec()
    } else {
        ranking[n - k..].to_vec()
    };
    let reduced: Vec<FeatureRow> = dataset
        .test
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.retain(|id| !removed.contains(&id))
                .ok_or_else(|| NiaqueError::InvalidRow(format!("removal empties test row {i}")))
        })
        .collect::<Result<_>>()?;
    let base = median_aad(model, dataset, &dataset.test)?;
    Ok(median_aad(model, dataset, &reduced)? - base)
}
