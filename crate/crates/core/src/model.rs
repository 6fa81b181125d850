//! The any-quantile network: ID/value embedding, dual-residual prototype
//! encoder and FiLM-conditioned quantile decoder.
//!
//! Width conventions (per block, `L` layers):
//! * encoder block input is `E_in` wide for the first block and `E` afterwards;
//! * hidden layers `1..L-1` are `W` wide, the last layer of every block is `E`
//!   wide so the per-feature residual `b_r` can be compared with the `E`-wide
//!   observation prototype;
//! * the decoder trunk is `E` wide, FiLM modulates the first layer output.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NiaqueError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Segments, Tape, Var};
use crate::tensor::Tensor;

/// Architecture and regularisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiaqueConfig {
    /// Residual blocks `R` (shared by encoder and decoder).
    pub blocks: usize,
    /// Fully-connected layers per block `L`.
    pub layers_per_block: usize,
    /// Observation embedding size `E`.
    pub latent_dim: usize,
    /// Per-feature input width `E_in`: `E_in − 1` ID-embedding slots plus the value.
    pub input_embed_dim: usize,
    /// Width `W` of the hidden (non-final) layers in every block.
    pub hidden_width: usize,
    /// Rows of the feature-ID embedding table.
    pub feature_vocab_capacity: usize,
    /// Fraction of training rows replaced by single-feature copies.
    pub single_feature_ratio: f64,
    /// Marginal per-feature dropout probability.
    pub feature_dropout_rate: f64,
}

impl Default for NiaqueConfig {
    fn default() -> Self {
        NiaqueConfig {
            blocks: 2,
            layers_per_block: 2,
            latent_dim: 64,
            input_embed_dim: 16,
            hidden_width: 64,
            feature_vocab_capacity: 256,
            single_feature_ratio: 0.05,
            feature_dropout_rate: 0.0,
        }
    }
}

impl NiaqueConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NiaqueError::Config(msg));
        if self.blocks == 0 || self.layers_per_block == 0 {
            return bad("blocks and layers_per_block must be positive".into());
        }
        if self.latent_dim == 0 || self.hidden_width == 0 || self.feature_vocab_capacity == 0 {
            return bad("latent_dim, hidden_width and feature_vocab_capacity must be positive".into());
        }
        if self.input_embed_dim < 2 {
            return bad(format!(
                "input_embed_dim must be at least 2 (got {})",
                self.input_embed_dim
            ));
        }
        if !(0.0..1.0).contains(&self.single_feature_ratio) {
            return bad(format!("single_feature_ratio {} not in [0, 1)", self.single_feature_ratio));
        }
        if !(0.0..1.0).contains(&self.feature_dropout_rate) {
            return bad(format!("feature_dropout_rate {} not in [0, 1)", self.feature_dropout_rate));
        }
        Ok(())
    }

    fn layer_width(&self, layer: usize) -> usize {
        if layer + 1 == self.layers_per_block {
            self.latent_dim
        } else {
            self.hidden_width
        }
    }

    /// Width of the FiLM-modulated activation (output of the first decoder layer).
    pub fn film_width(&self) -> usize {
        self.layer_width(0)
    }

    /// `(name, shape)` of every parameter, in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let e = self.latent_dim;
        let mut out = vec![(
            "embed.id".to_string(),
            vec![self.feature_vocab_capacity, self.input_embed_dim - 1],
        )];
        for r in 0..self.blocks {
            let input = if r == 0 { self.input_embed_dim } else { e };
            let mut prev = input;
            for l in 0..self.layers_per_block {
                let w = self.layer_width(l);
                out.push((format!("enc.{r}.fc.{l}.w"), vec![prev, w]));
                out.push((format!("enc.{r}.fc.{l}.b"), vec![w]));
                prev = w;
            }
            out.push((format!("enc.{r}.skip.w"), vec![input, e]));
            out.push((format!("enc.{r}.proj.w"), vec![e, e]));
        }
        for r in 0..self.blocks {
            let mut prev = e;
            for l in 0..self.layers_per_block {
                let w = self.layer_width(l);
                out.push((format!("dec.{r}.fc.{l}.w"), vec![prev, w]));
                out.push((format!("dec.{r}.fc.{l}.b"), vec![w]));
                prev = w;
            }
            out.push((format!("dec.{r}.film.w"), vec![1, 2 * self.film_width()]));
            out.push((format!("dec.{r}.film.b"), vec![2 * self.film_width()]));
            out.push((format!("dec.{r}.skip.w"), vec![e, e]));
            out.push((format!("dec.{r}.proj.w"), vec![e, e]));
        }
        out.push(("out.w".to_string(), vec![e, 1]));
        out.push(("out.b".to_string(), vec![1]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Sign-preserving log compression `sign(x)·ln(|x| + 1)`.
pub fn log_transform(value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(NiaqueError::NonFinite("log_transform input".into()));
    }
    Ok(value.abs().ln_1p().copysign(value))
}

/// One observation: `(feature id, raw value)` pairs plus an optional target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    feature_ids: Vec<usize>,
    values: Vec<f64>,
    target: Option<f64>,
}

impl FeatureRow {
    pub fn new(feature_ids: Vec<usize>, values: Vec<f64>, target: Option<f64>) -> Result<Self> {
        if feature_ids.len() != values.len() {
            return Err(NiaqueError::InvalidRow(format!(
                "{} ids vs {} values",
                feature_ids.len(),
                values.len()
            )));
        }
        if feature_ids.is_empty() {
            return Err(NiaqueError::InvalidRow("row has no features".into()));
        }
        if values.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(NiaqueError::InvalidRow("non-finite value".into()));
        }
        let mut sorted = feature_ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(NiaqueError::DuplicateFeature(w[0]));
        }
        Ok(FeatureRow {
            feature_ids,
            values,
            target,
        })
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> Option<f64> {
        self.target
    }

    /// Number of features `d`.
    pub fn len(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_ids.is_empty()
    }

    pub fn value_of(&self, id: usize) -> Option<f64> {
        self.feature_ids
            .iter()
            .position(|&f| f == id)
            .map(|i| self.values[i])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.feature_ids.iter().copied().zip(self.values.iter().copied())
    }

    /// Same observation with features sorted by id.
    pub fn canonicalized(&self) -> FeatureRow {
        let mut pairs: Vec<_> = self.pairs().collect();
        pairs.sort_by_key(|&(id, _)| id);
        FeatureRow {
            feature_ids: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
            target: self.target,
        }
    }

    /// Keeps the features for which `keep(id)` holds; `None` if nothing is left.
    pub fn retain(&self, mut keep: impl FnMut(usize) -> bool) -> Option<FeatureRow> {
        let (ids, vals): (Vec<_>, Vec<_>) = self.pairs().filter(|&(id, _)| keep(id)).unzip();
        if ids.is_empty() {
            None
        } else {
            Some(FeatureRow {
                feature_ids: ids,
                values: vals,
                target: self.target,
            })
        }
    }

    pub fn single(&self, index: usize) -> FeatureRow {
        FeatureRow {
            feature_ids: vec![self.feature_ids[index]],
            values: vec![self.values[index]],
            target: self.target,
        }
    }

    pub fn with_target(mut self, target: Option<f64>) -> FeatureRow {
        self.target = target;
        self
    }
}

/// Quantile levels attached to each observation: `per_row` levels for each of
/// the rows, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileGrid {
    per_row: usize,
    levels: Vec<f64>,
}

impl QuantileGrid {
    /// The same levels for all `rows` observations.
    pub fn shared(levels: &[f64], rows: usize) -> Result<Self> {
        Self::validate(levels)?;
        if levels.is_empty() {
            return Err(NiaqueError::EmptyInput("quantile levels"));
        }
        Ok(QuantileGrid {
            per_row: levels.len(),
            levels: levels.repeat(rows),
        })
    }

    /// Distinct levels per observation; every row must have the same count.
    pub fn per_row(levels: &[Vec<f64>]) -> Result<Self> {
        let k = levels.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(NiaqueError::EmptyInput("quantile levels"));
        }
        if levels.iter().any(|l| l.len() != k) {
            return Err(NiaqueError::dim("quantile grid", "rows carry different level counts"));
        }
        let flat = levels.concat();
        Self::validate(&flat)?;
        Ok(QuantileGrid {
            per_row: k,
            levels: flat,
        })
    }

    pub(crate) fn from_flat(per_row: usize, levels: Vec<f64>) -> Result<Self> {
        Self::validate(&levels)?;
        if per_row == 0 || levels.len() % per_row != 0 {
            return Err(NiaqueError::dim("quantile grid", "levels not divisible by per-row count"));
        }
        Ok(QuantileGrid { per_row, levels })
    }

    fn validate(levels: &[f64]) -> Result<()> {
        match levels.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
            Some(&q) => Err(NiaqueError::QuantileDomain(q)),
            None => Ok(()),
        }
    }

    pub fn per_row_count(&self) -> usize {
        self.per_row
    }

    pub fn rows(&self) -> usize {
        self.levels.len() / self.per_row
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.levels[i * self.per_row..(i + 1) * self.per_row]
    }
}

/// Predicted quantiles, one row per observation, columns aligned with the
/// requested levels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileBatchPrediction {
    pub quantiles: QuantileGrid,
    pub values: Tensor,
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    layers: Vec<Dense>,
    skip: ParamId,
    proj: ParamId,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    layers: Vec<Dense>,
    film: Dense,
    skip: ParamId,
    proj: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: ParamId,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    out: Dense,
}

impl Layout {
    fn resolve(config: &NiaqueConfig, params: &ParamStore) -> Result<Self> {
        let get = |name: String| {
            params
                .id(&name)
                .ok_or_else(|| NiaqueError::Format(format!("missing parameter `{name}`")))
        };
        let dense = |prefix: String| -> Result<Dense> {
            Ok(Dense {
                w: get(format!("{prefix}.w"))?,
                b: get(format!("{prefix}.b"))?,
            })
        };
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for r in 0..config.blocks {
            encoder.push(EncoderBlock {
                layers: (0..config.layers_per_block)
                    .map(|l| dense(format!("enc.{r}.fc.{l}")))
                    .collect::<Result<_>>()?,
                skip: get(format!("enc.{r}.skip.w"))?,
                proj: get(format!("enc.{r}.proj.w"))?,
            });
            decoder.push(DecoderBlock {
                layers: (0..config.layers_per_block)
                    .map(|l| dense(format!("dec.{r}.fc.{l}")))
                    .collect::<Result<_>>()?,
                film: dense(format!("dec.{r}.film"))?,
                skip: get(format!("dec.{r}.skip.w"))?,
                proj: get(format!("dec.{r}.proj.w"))?,
            });
        }
        Ok(Layout {
            embed: get("embed.id".into())?,
            encoder,
            decoder,
            out: dense("out".into())?,
        })
    }
}

/// Standard deviation of freshly initialised ID-embedding rows.
pub const EMBED_INIT_STD: f64 = 0.02;

/// Configuration plus parameters of one network.
#[derive(Clone, Debug)]
pub struct NiaqueModel {
    config: NiaqueConfig,
    params: ParamStore,
    layout: Layout,
}

impl NiaqueModel {
    /// Fresh model: FiLM linears and biases zero, ID embeddings `N(0, 0.02²)`,
    /// other weights `U(±1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(config: NiaqueConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let embed_dist = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name == "embed.id" {
                (0..n).map(|_| embed_dist.sample(rng)).collect()
            } else if name.ends_with(".b") || name.contains(".film.") {
                vec![0.0; n]
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let u = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                (0..n).map(|_| u.sample(rng)).collect()
            };
            params.insert(name, Tensor::from_raw(shape, data))?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store after checking every shape.
    pub fn from_params(config: NiaqueConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(NiaqueError::Format(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params
                .get(name)
                .ok_or_else(|| NiaqueError::Format(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(NiaqueError::dim(
                    "model parameters",
                    format!("`{name}` expected {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(NiaqueModel {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &NiaqueConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn embedding_param(&self) -> ParamId {
        self.layout.embed
    }

    /// Redraws the embedding rows of `ids` from the initial distribution and
    /// clears their optimizer moments. Other rows are untouched.
    pub fn reinit_embedding_rows<R: Rng + ?Sized>(&mut self, ids: &[usize], rng: &mut R) -> Result<()> {
        let cap = self.config.feature_vocab_capacity;
        let w = self.config.input_embed_dim - 1;
        let dist = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let id = self.layout.embed;
        for &f in ids {
            if f >= cap {
                return Err(NiaqueError::ResizeRequired {
                    needed: f + 1,
                    capacity: cap,
                });
            }
            for v in &mut self.params.value_mut(id)[f * w..(f + 1) * w] {
                *v = dist.sample(rng);
            }
            let entry = self.params.entry_mut(id);
            entry.first_moment[f * w..(f + 1) * w].fill(0.0);
            entry.second_moment[f * w..(f + 1) * w].fill(0.0);
        }
        Ok(())
    }

    /// Grows the embedding table to `capacity` rows; new rows are drawn from the
    /// initial distribution. Shrinking is not supported.
    pub fn resize_vocab<R: Rng + ?Sized>(&mut self, capacity: usize, rng: &mut R) -> Result<()> {
        let old = self.config.feature_vocab_capacity;
        if capacity < old {
            return Err(NiaqueError::InvalidArgument(format!(
                "cannot shrink vocabulary from {old} to {capacity}"
            )));
        }
        if capacity == old {
            return Ok(());
        }
        let w = self.config.input_embed_dim - 1;
        let dist = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let mut config = self.config.clone();
        config.feature_vocab_capacity = capacity;
        let mut params = ParamStore::new();
        for (pid, entry) in self.params.iter() {
            let (value, m, v) = if pid == self.layout.embed {
                let mut data = entry.value().data().to_vec();
                data.extend((0..(capacity - old) * w).map(|_| dist.sample(rng)));
                let mut m = entry.first_moment().to_vec();
                let mut v = entry.second_moment().to_vec();
                m.resize(capacity * w, 0.0);
                v.resize(capacity * w, 0.0);
                (Tensor::from_raw(vec![capacity, w], data), m, v)
            } else {
                (
                    entry.value().clone(),
                    entry.first_moment().to_vec(),
                    entry.second_moment().to_vec(),
                )
            };
            let id = params.insert(entry.name(), value)?;
            params.restore_moments(id, m, v)?;
        }
        params.set_step_count(self.params.step_count());
        *self = NiaqueModel::from_params(config, params)?;
        Ok(())
    }

    /// Per-feature input matrix for one observation: row `i` is the ID
    /// embedding of feature `i` followed by its log-transformed value.
    pub fn embed_inputs(&self, row: &FeatureRow) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (x, _) = self.record_embed(&mut tape, std::slice::from_ref(row))?;
        Ok(tape.value(x).clone())
    }

    /// Observation embedding `p_R` (length `E`) for an embedded `d × E_in` input.
    pub fn encode(&self, embedded: &Tensor) -> Result<Tensor> {
        if embedded.shape().len() != 2 || embedded.cols() != self.config.input_embed_dim {
            return Err(NiaqueError::dim(
                "encode",
                format!("expected d×{}, got {:?}", self.config.input_embed_dim, embedded.shape()),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.input(embedded.clone());
        let segs = Segments::uniform(1, embedded.rows())?;
        let p = self.record_encode(&mut tape, x, &segs)?;
        let data = tape.value(p).data().to_vec();
        Tensor::vector(data)
    }

    /// Predicted values at `quantiles` for one observation embedding.
    pub fn decode(&self, observation: &Tensor, quantiles: &[f64]) -> Result<Vec<f64>> {
        if observation.len() != self.config.latent_dim {
            return Err(NiaqueError::dim(
                "decode",
                format!("expected {} values, got {}", self.config.latent_dim, observation.len()),
            ));
        }
        let grid = QuantileGrid::shared(quantiles, 1)?;
        let mut tape = Tape::new();
        let p = tape.input(Tensor::matrix(1, observation.len(), observation.data().to_vec())?);
        let y = self.record_decode(&mut tape, p, &grid)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Predicts every requested quantile for every row.
    pub fn forward(&self, rows: &[FeatureRow], quantiles: &QuantileGrid) -> Result<QuantileBatchPrediction> {
        let mut tape = Tape::new();
        let y = self.record_forward(&mut tape, rows, quantiles)?;
        let k = quantiles.per_row_count();
        let values = Tensor::matrix(rows.len(), k, tape.value(y).data().to_vec())?;
        Ok(QuantileBatchPrediction {
            quantiles: quantiles.clone(),
            values,
        })
    }

    /// Records embed → encode → decode; returns a `(rows·K) × 1` prediction column.
    pub fn record_forward(&self, tape: &mut Tape, rows: &[FeatureRow], quantiles: &QuantileGrid) -> Result<Var> {
        if rows.is_empty() {
            return Err(NiaqueError::EmptyInput("forward"));
        }
        if quantiles.rows() != rows.len() {
            return Err(NiaqueError::dim(
                "forward",
                format!("{} rows vs {} quantile rows", rows.len(), quantiles.rows()),
            ));
        }
        let (x, segs) = self.record_embed(tape, rows)?;
        let p = self.record_encode(tape, x, &segs)?;
        self.record_decode(tape, p, quantiles)
    }

    /// Stacks all rows' features into one `(Σd) × E_in` matrix.
    pub fn record_embed(&self, tape: &mut Tape, rows: &[FeatureRow]) -> Result<(Var, Segments)> {
        let segs = Segments::from_lengths(rows.iter().map(FeatureRow::len))?;
        let ids: Vec<usize> = rows.iter().flat_map(|r| r.feature_ids().iter().copied()).collect();
        let values = rows
            .iter()
            .flat_map(|r| r.values().iter().copied())
            .map(log_transform)
            .collect::<Result<Vec<_>>>()?;
        let emb = tape.gather_rows(&self.params, self.layout.embed, &ids)?;
        let vals = tape.input(Tensor::from_raw(vec![values.len(), 1], values));
        let x = tape.concat_cols(emb, vals)?;
        Ok((x, segs))
    }

    fn dense(&self, tape: &mut Tape, x: Var, layer: &Dense, activate: bool) -> Result<Var> {
        let w = tape.param(&self.params, layer.w);
        let b = tape.param(&self.params, layer.b);
        let y = tape.linear(x, w, Some(b))?;
        Ok(if activate { tape.relu(y) } else { y })
    }

    fn matmul(&self, tape: &mut Tape, x: Var, w: ParamId) -> Result<Var> {
        let w = tape.param(&self.params, w);
        tape.linear(x, w, None)
    }

    /// Encoder over a ragged batch: `x` stacks every observation's features,
    /// `segs` delimits them. Returns `p_R`, one row per observation.
    pub fn record_encode(&self, tape: &mut Tape, x_in: Var, segs: &Segments) -> Result<Var> {
        let mut b_prev = x_in;
        let mut p_prev: Option<Var> = None;
        for (r, block) in self.layout.encoder.iter().enumerate() {
            // x_1 = x_in; afterwards subtract the running prototype scaled by 1/(r−1).
            let x_r = match p_prev {
                None => x_in,
                Some(p) => {
                    let scaled = tape.scale(p, 1.0 / r as f64)?;
                    let spread = tape.segment_expand(scaled, segs)?;
                    let delta = tape.sub(b_prev, spread)?;
                    tape.relu(delta)
                }
            };
            let mut h = x_r;
            for layer in &block.layers {
                h = self.dense(tape, h, layer, true)?;
            }
            let skip = self.matmul(tape, x_r, block.skip)?;
            let pre = tape.add(skip, h)?;
            b_prev = tape.relu(pre);
            let f = self.matmul(tape, h, block.proj)?;
            let pooled = tape.segment_mean(f, segs)?;
            p_prev = Some(match p_prev {
                None => pooled,
                Some(p) => tape.add(p, pooled)?,
            });
        }
        Ok(p_prev.expect("at least one block"))
    }

    /// Decoder: `obs` holds one observation embedding per row; each row is
    /// evaluated at its `quantiles.per_row_count()` levels.
    pub fn record_decode(&self, tape: &mut Tape, obs: Var, quantiles: &QuantileGrid) -> Result<Var> {
        let n_obs = tape.value(obs).rows();
        if quantiles.rows() != n_obs {
            return Err(NiaqueError::dim(
                "decode",
                format!("{n_obs} observations vs {} quantile rows", quantiles.rows()),
            ));
        }
        let k = quantiles.per_row_count();
        let segs = Segments::uniform(n_obs, k)?;
        let q = tape.input(Tensor::from_raw(
            vec![quantiles.levels().len(), 1],
            quantiles.levels().to_vec(),
        ));
        // The trunk holds one row per observation until the first modulation,
        // then one row per (observation, level).
        let mut trunk = obs;
        let mut expanded = false;
        let mut running: Option<Var> = None;
        for block in &self.layout.decoder {
            let mut h = self.dense(tape, trunk, &block.layers[0], true)?;
            let mut skip = self.matmul(tape, trunk, block.skip)?;
            if !expanded {
                h = tape.segment_expand(h, &segs)?;
                skip = tape.segment_expand(skip, &segs)?;
                expanded = true;
            }
            let gb = self.dense(tape, q, &block.film, false)?;
            h = tape.film(h, gb)?;
            for layer in &block.layers[1..] {
                h = self.dense(tape, h, layer, true)?;
            }
            let pre = tape.add(skip, h)?;
            trunk = tape.relu(pre);
            let step = self.matmul(tape, h, block.proj)?;
            running = Some(match running {
                None => step,
                Some(acc) => tape.add(acc, step)?,
            });
        }
        let running = running.expect("at least one block");
        self.dense(tape, running, &self.layout.out, false)
    }
}
