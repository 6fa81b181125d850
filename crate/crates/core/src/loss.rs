//! Pinball loss, sample CRPS and the point/calibration metrics used for evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{NiaqueError, Result};
use crate::tensor::Tensor;

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(NiaqueError::QuantileDomain(q))
    }
}

/// Quantile loss `(y − ŷ)(q − 1{y ≤ ŷ})`.
pub fn pinball(y: f64, yhat: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    let ind = if y <= yhat { 1.0 } else { 0.0 };
    Ok((y - yhat) * (q - ind))
}

/// Sample CRPS: `2/(S·Q) Σ_i Σ_j pinball(y_i, ŷ_ij, q_j)` with `yhat` shaped `S×Q`.
pub fn crps_sample(y: &[f64], yhat: &Tensor, q: &[f64]) -> Result<f64> {
    let (s, nq) = (y.len(), q.len());
    if s == 0 || nq == 0 {
        return Err(NiaqueError::EmptyInput("crps_sample"));
    }
    if yhat.rows() != s || yhat.cols() != nq {
        return Err(NiaqueError::dim(
            "crps_sample",
            format!("expected {s}×{nq} predictions, got {:?}", yhat.shape()),
        ));
    }
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        for (&p, &qj) in yhat.row(i).iter().zip(q) {
            total += pinball(yi, p, qj)?;
        }
    }
    Ok(2.0 * total / (s * nq) as f64)
}

/// Point-prediction accuracy of the median forecast.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub smape: f64,
    pub aad: f64,
    pub bias: f64,
    pub rmse: f64,
    pub rmsle: f64,
}

pub fn point_metrics(y: &[f64], yhat_median: &[f64]) -> Result<PointMetrics> {
    if y.len() != yhat_median.len() {
        return Err(NiaqueError::dim(
            "point_metrics",
            format!("{} targets vs {} predictions", y.len(), yhat_median.len()),
        ));
    }
    if y.is_empty() {
        return Err(NiaqueError::EmptyInput("point_metrics"));
    }
    let n = y.len() as f64;
    let (mut smape, mut aad, mut bias, mut sq, mut sqlog) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&yi, &pi) in y.iter().zip(yhat_median) {
        let abs_err = (yi - pi).abs();
        let denom = yi.abs() + pi.abs();
        if denom > 0.0 {
            smape += abs_err / denom;
        }
        aad += abs_err;
        bias += pi - yi;
        sq += abs_err * abs_err;
        for v in [yi, pi] {
            if v <= -1.0 {
                return Err(NiaqueError::LogDomain(v));
            }
        }
        let dl = yi.ln_1p() - pi.ln_1p();
        sqlog += dl * dl;
    }
    Ok(PointMetrics {
        smape: 200.0 * smape / n,
        aad: aad / n,
        bias: bias / n,
        rmse: (sq / n).sqrt(),
        rmsle: (sqlog / n).sqrt(),
    })
}

/// Percentage of targets strictly inside `(low, high)`.
pub fn coverage(y: &[f64], low: &[f64], high: &[f64]) -> f64 {
    assert!(y.len() == low.len() && y.len() == high.len(), "coverage: length mismatch");
    if y.is_empty() {
        return 0.0;
    }
    let inside = y
        .iter()
        .zip(low.iter().zip(high))
        .filter(|(&yi, (&lo, &hi))| yi > lo && yi < hi)
        .count();
    100.0 * inside as f64 / y.len() as f64
}

/// All evaluation metrics for one set of predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub smape: f64,
    pub aad: f64,
    pub bias: f64,
    pub rmse: f64,
    pub rmsle: f64,
    pub crps: f64,
    /// Confidence level in percent (e.g. 95) → coverage percentage.
    pub coverage_at: BTreeMap<u32, f64>,
}

impl MetricReport {
    pub fn from_parts(point: PointMetrics, crps: f64, coverage_at: BTreeMap<u32, f64>) -> Self {
        MetricReport {
            smape: point.smape,
            aad: point.aad,
            bias: point.bias,
            rmse: point.rmse,
            rmsle: point.rmsle,
            crps,
            coverage_at,
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("smape".to_string(), self.smape),
            ("aad".to_string(), self.aad),
            ("bias".to_string(), self.bias),
            ("rmse".to_string(), self.rmse),
            ("rmsle".to_string(), self.rmsle),
            ("crps".to_string(), self.crps),
        ];
        for (level, cov) in &self.coverage_at {
            out.push((format!("coverage@{level}"), *cov));
        }
        out
    }

    /// One `name=value` line per metric, values with 6 significant digits.
    pub fn to_record(&self, prefix: &str) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{prefix}{k}={}", format_sig6(v));
        }
        s
    }

    /// Unweighted mean of several reports (macro average).
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        let n = reports.len() as f64;
        let first = reports.first()?;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut coverage_at = BTreeMap::new();
        for level in first.coverage_at.keys() {
            let v = reports.iter().filter_map(|r| r.coverage_at.get(level)).sum::<f64>() / n;
            coverage_at.insert(*level, v);
        }
        Some(MetricReport {
            smape: avg(|r| r.smape),
            aad: avg(|r| r.aad),
            bias: avg(|r| r.bias),
            rmse: avg(|r| r.rmse),
            rmsle: avg(|r| r.rmsle),
            crps: avg(|r| r.crps),
            coverage_at,
        })
    }
}

/// Formats like C's `%.6g`.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding can bump the exponent (e.g. 999999.7 → 1e6); re-derive from the rounded mantissa.
    let sci = format!("{v:.5e}");
    let (mant, e) = sci.split_once('e').unwrap();
    let e: i32 = e.parse().unwrap();
    let exp = if e != exp { e } else { exp };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{}e{}{:02}", trim_zeros(mant), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
