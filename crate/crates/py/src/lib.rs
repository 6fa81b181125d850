//! Python bindings: models, checkpoints, metrics and the train/evaluate workflow.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use niaque::checkpoint::Checkpoint;
use niaque::config::RunConfig;
use niaque::data::{self, FeatureRegistry, RawTable, Split};
use niaque::evaluate::{evaluate as run_evaluate, predict as run_predict};
use niaque::interpret::importance_weights;
use niaque::loss;
use niaque::synthetic::SyntheticTask;
use niaque::trainer::pretrain;
use niaque::{FeatureRow, NiaqueConfig, NiaqueError, NiaqueModel, Tensor};

fn py_err(e: NiaqueError) -> PyErr {
    match e {
        NiaqueError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type PyRes<T> = PyResult<T>;

fn rows_of(rows: Vec<Vec<(usize, f64)>>) -> PyRes<Vec<FeatureRow>> {
    rows.into_iter()
        .map(|pairs| {
            let (ids, vals) = pairs.into_iter().unzip();
            FeatureRow::new(ids, vals, None).map_err(py_err)
        })
        .collect()
}

fn matrix_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// A NIAQUE network. Rows are lists of `(feature_id, value)` pairs.
#[pyclass(name = "Model", module = "niaque", frozen)]
struct PyModel {
    inner: NiaqueModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (
        seed = 0,
        blocks = 2,
        layers_per_block = 2,
        latent_dim = 64,
        input_embed_dim = 16,
        hidden_width = 64,
        feature_vocab_capacity = 256,
        single_feature_ratio = 0.05,
        feature_dropout_rate = 0.0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        blocks: usize,
        layers_per_block: usize,
        latent_dim: usize,
        input_embed_dim: usize,
        hidden_width: usize,
        feature_vocab_capacity: usize,
        single_feature_ratio: f64,
        feature_dropout_rate: f64,
    ) -> PyRes<Self> {
        let config = NiaqueConfig {
            blocks,
            layers_per_block,
            latent_dim,
            input_embed_dim,
            hidden_width,
            feature_vocab_capacity,
            single_feature_ratio,
            feature_dropout_rate,
        };
        let mut rng = niaque::rng::stream(seed, niaque::rng::streams::INIT);
        let inner = NiaqueModel::new(config, &mut rng).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    /// Predictions on the model's internal target scale, one list per row.
    fn predict(&self, rows: Vec<Vec<(usize, f64)>>, quantiles: Vec<f64>) -> PyRes<Vec<Vec<f64>>> {
        let rows = rows_of(rows)?;
        let t = run_predict(&self.inner, &rows, &quantiles).map_err(py_err)?;
        Ok(matrix_rows(&t))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.config().param_count()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.config().latent_dim
    }

    #[getter]
    fn feature_vocab_capacity(&self) -> usize {
        self.inner.config().feature_vocab_capacity
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(blocks={}, layers_per_block={}, latent_dim={}, params={})",
            c.blocks,
            c.layers_per_block,
            c.latent_dim,
            c.param_count()
        )
    }
}

/// A trained model with its feature registry and per-dataset target scaling.
#[pyclass(name = "Checkpoint", module = "niaque", frozen)]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: &str) -> PyRes<Self> {
        Ok(PyCheckpoint {
            inner: Checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyRes<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn model(&self) -> PyModel {
        PyModel {
            inner: self.inner.model.clone(),
        }
    }

    #[getter]
    fn datasets(&self) -> Vec<String> {
        self.inner.datasets.iter().map(|d| d.name.clone()).collect()
    }

    #[getter]
    fn val_pinball(&self) -> Option<f64> {
        self.inner.val_pinball
    }

    /// `(row_index, q, yhat)` triples in target units for every row of a CSV.
    #[pyo3(signature = (path, quantiles, dataset = None))]
    fn predict_csv(&self, path: &str, quantiles: Vec<f64>, dataset: Option<&str>) -> PyRes<Vec<(usize, f64, f64)>> {
        let meta = match dataset {
            Some(name) => self.inner.dataset(name),
            None => self.inner.datasets.last(),
        }
        .ok_or_else(|| PyValueError::new_err("unknown dataset"))?;
        let table = RawTable::read_csv(path).map_err(py_err)?;
        let rows = meta.encode_table(&table).map_err(py_err)?;
        let t = run_predict(&self.inner.model, &rows, &quantiles).map_err(py_err)?;
        let mut out = Vec::with_capacity(rows.len() * quantiles.len());
        for i in 0..rows.len() {
            for (j, &q) in quantiles.iter().enumerate() {
                out.push((i, q, meta.denormalize(t.at(i, j))));
            }
        }
        Ok(out)
    }
}

fn run_config(config: Option<&str>, seed: u64, overrides: &[String]) -> PyRes<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.merge_file(path).map_err(py_err)?;
    }
    for key in ["train.seed", "eval.seed", "gradcheck.seed"] {
        cfg.set(key, &seed.to_string()).map_err(py_err)?;
    }
    cfg.apply_overrides(overrides.iter().map(String::as_str)).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[pyfunction]
fn pinball(y: f64, yhat: f64, q: f64) -> PyRes<f64> {
    loss::pinball(y, yhat, q).map_err(py_err)
}

/// Sample CRPS with `yhat[i][j]` the prediction for row `i` at level `q[j]`.
#[pyfunction]
fn crps_sample(y: Vec<f64>, yhat: Vec<Vec<f64>>, q: Vec<f64>) -> PyRes<f64> {
    let cols = q.len();
    if yhat.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("every row of yhat needs one value per level"));
    }
    let t = Tensor::matrix(yhat.len(), cols, yhat.concat()).map_err(py_err)?;
    loss::crps_sample(&y, &t, &q).map_err(py_err)
}

#[pyfunction]
fn coverage(y: Vec<f64>, low: Vec<f64>, high: Vec<f64>) -> PyRes<f64> {
    if y.len() != low.len() || y.len() != high.len() {
        return Err(PyValueError::new_err("y, low and high must have equal length"));
    }
    Ok(loss::coverage(&y, &low, &high))
}

#[pyfunction]
fn point_metrics(y: Vec<f64>, yhat: Vec<f64>) -> PyRes<BTreeMap<String, f64>> {
    let m = loss::point_metrics(&y, &yhat).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("smape".into(), m.smape),
        ("aad".into(), m.aad),
        ("bias".into(), m.bias),
        ("rmse".into(), m.rmse),
        ("rmsle".into(), m.rmsle),
    ]))
}

#[pyfunction]
fn gaussian_crps(mean: f64, sd: f64, y: f64) -> f64 {
    niaque::normal::gaussian_crps(mean, sd, y)
}

/// Conditional quantile of a named synthetic task at `x`.
#[pyfunction]
fn true_quantile(task: &str, x: Vec<f64>, q: f64) -> PyRes<f64> {
    let t = SyntheticTask::preset(task).map_err(py_err)?;
    if x.len() != t.dim {
        return Err(PyValueError::new_err(format!("task `{task}` takes {} inputs", t.dim)));
    }
    t.true_quantile(&x, q).map_err(py_err)
}

/// Writes `n` rows of a synthetic task to `path` (columns `x1..xd, y`).
#[pyfunction]
fn synth(task: &str, n: usize, seed: u64, path: &str) -> PyRes<()> {
    let t = SyntheticTask::preset(task).map_err(py_err)?;
    let table = t
        .sample_table(n, &mut niaque::rng::stream(seed, &format!("synthetic:{task}")))
        .map_err(py_err)?;
    let f = std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    table.write_csv(std::io::BufWriter::new(f)).map_err(py_err)
}

/// Trains on a manifest, writes `final.ckpt` and `best.ckpt` under `out_dir`
/// and returns the training log lines.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, seed = 0, config = None, overrides = Vec::new()))]
fn train(manifest: &str, out_dir: &str, seed: u64, config: Option<&str>, overrides: Vec<String>) -> PyRes<Vec<String>> {
    let cfg = run_config(config, seed, &overrides)?;
    let mut registry = FeatureRegistry::new();
    let datasets = data::ingest_manifest(manifest, &mut registry, &cfg.ingest_options()).map_err(py_err)?;
    let s = &cfg.sections;
    let mut log = Vec::new();
    let outcome = pretrain(&datasets, &registry, s.model.clone(), s.train.clone(), &mut log).map_err(py_err)?;
    let dir = std::path::Path::new(out_dir);
    std::fs::create_dir_all(dir).map_err(|e| PyIOError::new_err(format!("{out_dir}: {e}")))?;
    outcome.last.save(dir.join("final.ckpt")).map_err(py_err)?;
    outcome.best.save(dir.join("best.ckpt")).map_err(py_err)?;
    Ok(String::from_utf8_lossy(&log).lines().map(str::to_string).collect())
}

/// Metric report `{name: value}` for one split; ingestion must match training.
#[pyfunction]
#[pyo3(signature = (ckpt, manifest, split = "test", seed = 0, config = None, overrides = Vec::new()))]
fn evaluate(
    ckpt: &PyCheckpoint,
    manifest: &str,
    split: &str,
    seed: u64,
    config: Option<&str>,
    overrides: Vec<String>,
) -> PyRes<BTreeMap<String, f64>> {
    let cfg = run_config(config, seed, &overrides)?;
    let split: Split = split.parse().map_err(py_err)?;
    let c = &ckpt.inner;
    let mut registry = c.registry.clone();
    let datasets = data::ingest_manifest(manifest, &mut registry, &cfg.ingest_options()).map_err(py_err)?;
    for ds in &datasets {
        c.check_dataset(ds).map_err(py_err)?;
    }
    let report = run_evaluate(&c.model, &datasets, split, &cfg.sections.eval).map_err(py_err)?;
    Ok(report
        .to_record()
        .lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
        .collect())
}

/// `(column, ci_width, weight)` per feature, most important first.
#[pyfunction]
#[pyo3(signature = (ckpt, manifest, alpha = 0.05, seed = 0, config = None))]
fn importance(
    ckpt: &PyCheckpoint,
    manifest: &str,
    alpha: f64,
    seed: u64,
    config: Option<&str>,
) -> PyRes<Vec<(String, String, f64, f64)>> {
    let cfg = run_config(config, seed, &[])?;
    let c = &ckpt.inner;
    let mut registry = c.registry.clone();
    let datasets = data::ingest_manifest(manifest, &mut registry, &cfg.ingest_options()).map_err(py_err)?;
    let mut out = Vec::new();
    for ds in &datasets {
        c.check_dataset(ds).map_err(py_err)?;
        let r = importance_weights(&c.model, ds, alpha).map_err(py_err)?;
        out.extend(r.entries.into_iter().map(|e| (e.dataset, e.column, e.ci_width, e.weight)));
    }
    Ok(out)
}

/// Largest relative gradient error over `configs` random tiny networks.
#[pyfunction]
#[pyo3(signature = (configs = 20, seed = 0))]
fn gradcheck(configs: usize, seed: u64) -> PyRes<f64> {
    let opts = niaque::gradcheck::GradcheckOptions {
        configs,
        seed,
        ..Default::default()
    };
    Ok(niaque::gradcheck::run(&opts).map_err(py_err)?.max_rel_err)
}

#[pymodule(name = "niaque")]
fn niaque_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(pinball, m)?)?;
    m.add_function(wrap_pyfunction!(crps_sample, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(point_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_crps, m)?)?;
    m.add_function(wrap_pyfunction!(true_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
