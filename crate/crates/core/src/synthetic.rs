//! Synthetic regression tasks with closed-form conditional quantiles:
//! `y = g(x) + σ(x)·ε`, `ε ~ N(0, 1)`, `x ~ U(−1, 1)^d`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ingest_table, FeatureRegistry, IngestOptions, RawTable, SplitDataset};
use crate::error::{NiaqueError, Result};
use crate::model::FeatureRow;
use crate::normal;
use crate::rng;

/// `amplitude · sin(frequency · x_feature)` added to the affine mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub feature: usize,
    pub amplitude: f64,
    pub frequency: f64,
}

/// Mean `intercept + w·x (+ sine)`, scale `c0 + c1·|x_1|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub dim: usize,
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub sine: Option<SineTerm>,
    pub c0: f64,
    pub c1: f64,
}

impl Default for SyntheticTask {
    /// d = 5, g = 2x₁ − x₂, σ = 0.5 + 0.5|x₁|; x₃..x₅ carry no signal.
    fn default() -> Self {
        SyntheticTask {
            dim: 5,
            intercept: 0.0,
            weights: vec![2.0, -1.0, 0.0, 0.0, 0.0],
            sine: None,
            c0: 0.5,
            c1: 0.5,
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NiaqueError::InvalidArgument(format!("synthetic task: {m}")));
        if self.dim == 0 || self.weights.len() != self.dim {
            return bad("weights must have one entry per dimension");
        }
        if !(self.c0 > 0.0) || self.c1 < 0.0 {
            return bad("need c0 > 0 and c1 >= 0");
        }
        if let Some(s) = &self.sine {
            if s.feature >= self.dim {
                return bad("sine feature out of range");
            }
        }
        let all = [self.intercept, self.c0, self.c1]
            .into_iter()
            .chain(self.weights.iter().copied())
            .chain(self.sine.iter().flat_map(|s| [s.amplitude, s.frequency]));
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite coefficient");
        }
        Ok(())
    }

    /// Homoscedastic/heteroscedastic Gaussian presets by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "hetero-gaussian" | "default" => Ok(Self::default()),
            "homo-gaussian" => Ok(SyntheticTask {
                c1: 0.0,
                ..Self::default()
            }),
            "sine-gaussian" => Ok(SyntheticTask {
                sine: Some(SineTerm {
                    feature: 0,
                    amplitude: 0.5,
                    frequency: PI,
                }),
                ..Self::default()
            }),
            other => Err(NiaqueError::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        let mut g = self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        if let Some(s) = &self.sine {
            g += s.amplitude * (s.frequency * x[s.feature]).sin();
        }
        g
    }

    pub fn scale(&self, x: &[f64]) -> f64 {
        self.c0 + self.c1 * x[0].abs()
    }

    /// Conditional quantile `g(x) + σ(x)·Φ⁻¹(q)`.
    pub fn true_quantile(&self, x: &[f64], q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(NiaqueError::QuantileDomain(q));
        }
        Ok(self.mean(x) + self.scale(x) * normal::quantile(q))
    }

    /// Expected CRPS of the ideal predictive distribution at `x`, `σ(x)/√π`.
    pub fn true_crps(&self, x: &[f64]) -> f64 {
        self.scale(x) / PI.sqrt()
    }

    /// Draws `n` rows as a table with columns `x1..xd, y`.
    pub fn sample_table<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<RawTable> {
        self.validate()?;
        let mut headers: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        headers.push("y".into());
        let rows = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eps: f64 = StandardNormal.sample(rng);
                let y = self.mean(&x) + self.scale(&x) * eps;
                x.iter().chain(std::iter::once(&y)).map(|v| Some(v.to_string())).collect()
            })
            .collect();
        Ok(RawTable { headers, rows })
    }

    /// Samples `n ≥ 10` rows and packages them through the standard ingestion path.
    pub fn generate(&self, name: &str, n: usize, seed: u64, registry: &mut FeatureRegistry) -> Result<SplitDataset> {
        if n < 10 {
            return Err(NiaqueError::InvalidArgument(format!("need at least 10 rows, got {n}")));
        }
        let table = self.sample_table(n, &mut rng::stream(seed, &format!("synthetic:{name}")))?;
        let opts = IngestOptions {
            seed,
            ..IngestOptions::default()
        };
        ingest_table(name, "synthetic", &table, "y", registry, &opts)
    }

    /// Raw `x` of an ingested row; every feature must be present.
    pub fn inputs_of(&self, ds: &SplitDataset, row: &FeatureRow) -> Result<Vec<f64>> {
        ds.meta
            .columns
            .iter()
            .take(self.dim)
            .map(|c| row.value_of(c.feature_id).ok_or(NiaqueError::FeatureAbsent(c.feature_id)))
            .collect()
    }
}

/// Six related tasks: shared structure, drifting coefficients. The last one is
/// meant to be held out for fine-tuning.
pub fn related_family() -> Vec<SyntheticTask> {
    (0..6)
        .map(|k| {
            let k = k as f64;
            SyntheticTask {
                dim: 5,
                intercept: 0.0,
                weights: vec![1.0 + 0.1 * k, -(0.5 + 0.05 * k), 0.0, 0.0, 0.0],
                sine: Some(SineTerm {
                    feature: 0,
                    amplitude: 1.0 + 0.1 * (k % 3.0),
                    frequency: 2.5 * PI,
                }),
                c0: 0.3 + 0.03 * k,
                c1: 1.0,
            }
        })
        .collect()
}
