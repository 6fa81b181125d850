//! Record-and-replay reverse-mode differentiation over a fixed op set.
//!
//! Every forward call appends one node holding its output value. [`Tape::backward`]
//! walks the nodes in exact reverse recording order and accumulates gradients
//! into the [`ParamStore`] (gradients add up; the caller zeroes them).

use std::sync::Arc;

use crate::error::{NiaqueError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row offsets splitting a matrix into contiguous segments: segment `s` covers
/// rows `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments(Arc<[usize]>);

impl Segments {
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.len() < 2 || offsets[0] != 0 {
            return Err(NiaqueError::dim("segments", "need at least one segment starting at 0"));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NiaqueError::EmptyInput("segment"));
        }
        Ok(Segments(offsets.into()))
    }

    /// `count` segments of `len` rows each.
    pub fn uniform(count: usize, len: usize) -> Result<Self> {
        Self::from_offsets((0..=count).map(|i| i * len).collect())
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut offsets = vec![0];
        for l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Self::from_offsets(offsets)
    }

    pub fn count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.0[s]..self.0[s + 1]
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SegmentMean(Var, Segments),
    SegmentExpand(Var, Segments),
    Film { h: Var, gb: Var },
    Sum(Var),
    PinballMean { pred: Var, targets: Vec<f64>, quantiles: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    macs: u64,
    relu_margin: f64,
    pinball_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NiaqueError::NonFinite(op.to_string()))
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every strided index touched for the given
    // dimensions (checked above in debug builds, guaranteed by callers).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            macs: 0,
            relu_margin: f64::INFINITY,
            pinball_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Multiply-accumulate operations performed by forward matrix products.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Smallest |input| seen by any relu; finite-difference probes must stay clear of it.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    /// Smallest |y - ŷ| seen by the pinball loss.
    pub fn pinball_margin(&self) -> f64 {
        self.pinball_margin
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Rows `ids` of a 2-D parameter table.
    pub fn gather_rows(&mut self, store: &ParamStore, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = store.value(table);
        if t.shape().len() != 2 {
            return Err(NiaqueError::dim("gather_rows", "table must be 2-D"));
        }
        if ids.is_empty() {
            return Err(NiaqueError::EmptyInput("gather_rows"));
        }
        let (cap, w) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * w);
        for &id in ids {
            if id >= cap {
                return Err(NiaqueError::UnknownFeature { id, capacity: cap });
            }
            out.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Tensor::from_raw(vec![ids.len(), w], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `x · w + b` for `x: n×a`, `w: a×b`, `b: b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 {
            return Err(NiaqueError::dim("linear", "weight must be 2-D"));
        }
        let (n, a) = (xv.rows(), xv.cols());
        let (wa, wb) = (wv.shape()[0], wv.shape()[1]);
        if a != wa {
            return Err(NiaqueError::dim(
                "linear",
                format!("input width {a} vs weight rows {wa}"),
            ));
        }
        let mut out = vec![0.0; n * wb];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != wb {
                return Err(NiaqueError::dim(
                    "linear",
                    format!("bias length {} vs output width {wb}", bv.len()),
                ));
            }
            for row in out.chunks_exact_mut(wb) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(n, a, wb, xv.data(), (a, 1), wv.data(), (wb, 1), 1.0, &mut out);
        self.macs += (n * a * wb) as u64;
        ensure_finite("linear", &out)?;
        Ok(self.push(Tensor::from_raw(vec![n, wb], out), Op::Linear { x, w, b }))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut margin = self.relu_margin;
        let data: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| {
                margin = margin.min(v.abs());
                v.max(0.0)
            })
            .collect();
        let shape = xv.shape().to_vec();
        self.relu_margin = margin;
        self.push(Tensor::from_raw(shape, data), Op::Relu(x))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NiaqueError::dim(
                op,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        ensure_finite(op, &data)?;
        Ok(Tensor::from_raw(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().iter().map(|v| v * c).collect();
        ensure_finite("scale", &data)?;
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_raw(shape, data), Op::Scale(x, c)))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(NiaqueError::dim(
                "concat_cols",
                format!("{} vs {} rows", av.rows(), bv.rows()),
            ));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let n = av.rows();
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        Ok(self.push(Tensor::from_raw(vec![n, ca + cb], data), Op::ConcatCols(a, b)))
    }

    /// Per-segment mean of rows: the prototype layer applied to every observation
    /// of a ragged batch at once. Rows are accumulated in index order.
    pub fn segment_mean(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != segs.total_rows() {
            return Err(NiaqueError::dim(
                "segment_mean",
                format!("{} rows vs {} segmented", xv.rows(), segs.total_rows()),
            ));
        }
        let c = xv.cols();
        let mut out = vec![0.0; segs.count() * c];
        for (s, acc) in out.chunks_exact_mut(c).enumerate() {
            let range = segs.range(s);
            let inv = 1.0 / range.len() as f64;
            for i in range {
                for (a, &v) in acc.iter_mut().zip(xv.row(i)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        ensure_finite("segment_mean", &out)?;
        Ok(self.push(
            Tensor::from_raw(vec![segs.count(), c], out),
            Op::SegmentMean(x, segs.clone()),
        ))
    }

    /// Repeats row `s` of `x` over every row of segment `s`.
    pub fn segment_expand(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != segs.count() {
            return Err(NiaqueError::dim(
                "segment_expand",
                format!("{} rows vs {} segments", xv.rows(), segs.count()),
            ));
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(segs.total_rows() * c);
        for s in 0..segs.count() {
            for _ in segs.range(s) {
                out.extend_from_slice(xv.row(s));
            }
        }
        Ok(self.push(
            Tensor::from_raw(vec![segs.total_rows(), c], out),
            Op::SegmentExpand(x, segs.clone()),
        ))
    }

    /// Feature-wise modulation `(1 + γ) ⊙ h + β` where `gb = [γ | β]`.
    pub fn film(&mut self, h: Var, gb: Var) -> Result<Var> {
        let (hv, gv) = (self.value(h), self.value(gb));
        let w = hv.cols();
        if gv.rows() != hv.rows() || gv.cols() != 2 * w {
            return Err(NiaqueError::dim(
                "film",
                format!("h {:?} vs modulation {:?}", hv.shape(), gv.shape()),
            ));
        }
        let mut out = Vec::with_capacity(hv.len());
        for i in 0..hv.rows() {
            let (gamma, beta) = gv.row(i).split_at(w);
            out.extend(
                hv.row(i)
                    .iter()
                    .zip(gamma)
                    .zip(beta)
                    .map(|((&x, &g), &b)| (1.0 + g) * x + b),
            );
        }
        ensure_finite("film", &out)?;
        let shape = vec![hv.rows(), w];
        Ok(self.push(Tensor::from_raw(shape, out), Op::Film { h, gb }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean pinball loss over predictions `pred` (n values) against `targets`
    /// at levels `quantiles`.
    pub fn pinball_mean(&mut self, pred: Var, targets: &[f64], quantiles: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        let n = pv.len();
        if targets.len() != n || quantiles.len() != n {
            return Err(NiaqueError::dim(
                "pinball_mean",
                format!("{n} predictions, {} targets, {} quantiles", targets.len(), quantiles.len()),
            ));
        }
        let mut total = 0.0;
        let mut margin = self.pinball_margin;
        for ((&yhat, &y), &q) in pv.data().iter().zip(targets).zip(quantiles) {
            total += crate::loss::pinball(y, yhat, q)?;
            margin = margin.min((y - yhat).abs());
        }
        self.pinball_margin = margin;
        let loss = total / n as f64;
        ensure_finite("pinball_mean", &[loss])?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::PinballMean {
                pred,
                targets: targets.to_vec(),
                quantiles: quantiles.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `params`; a tape can be replayed only once.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(NiaqueError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(NiaqueError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (acc, v) in params.grad_mut(*id).iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
                Op::Gather { table, ids } => {
                    let w = node.value.cols();
                    let tg = params.grad_mut(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (acc, v) in tg[id * w..(id + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *acc += v;
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (n, a) = (xv.rows(), xv.cols());
                    let nb = wv.shape()[1];
                    // dx = g · wᵀ
                    let mut dx = vec![0.0; n * a];
                    gemm(n, nb, a, &g, (nb, 1), wv.data(), (1, nb), 0.0, &mut dx);
                    // dw = xᵀ · g
                    let mut dw = vec![0.0; a * nb];
                    gemm(a, n, nb, xv.data(), (1, a), &g, (nb, 1), 0.0, &mut dw);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let mut db = vec![0.0; nb];
                        for row in g.chunks_exact(nb) {
                            for (acc, v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = g
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * c).collect());
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    let mut da = Vec::with_capacity(g.len() / (ca + cb) * ca);
                    let mut db = Vec::with_capacity(g.len() / (ca + cb) * cb);
                    for row in g.chunks_exact(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SegmentMean(x, segs) => {
                    let c = node.value.cols();
                    let mut dx = vec![0.0; segs.total_rows() * c];
                    for s in 0..segs.count() {
                        let range = segs.range(s);
                        let inv = 1.0 / range.len() as f64;
                        let gs = &g[s * c..(s + 1) * c];
                        for i in range {
                            for (d, &v) in dx[i * c..(i + 1) * c].iter_mut().zip(gs) {
                                *d = v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SegmentExpand(x, segs) => {
                    let c = node.value.cols();
                    let mut dx = vec![0.0; segs.count() * c];
                    for s in 0..segs.count() {
                        let acc = &mut dx[s * c..(s + 1) * c];
                        for i in segs.range(s) {
                            for (a, &v) in acc.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                                *a += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Film { h, gb } => {
                    let hv = &self.nodes[h.0].value;
                    let gv = &self.nodes[gb.0].value;
                    let w = hv.cols();
                    let mut dh = Vec::with_capacity(g.len());
                    let mut dgb = Vec::with_capacity(2 * g.len());
                    for i in 0..hv.rows() {
                        let gi = &g[i * w..(i + 1) * w];
                        let gamma = &gv.row(i)[..w];
                        dh.extend(gi.iter().zip(gamma).map(|(&d, &gm)| d * (1.0 + gm)));
                        dgb.extend(gi.iter().zip(hv.row(i)).map(|(&d, &x)| d * x));
                        dgb.extend_from_slice(gi);
                    }
                    accumulate(&mut grads, *h, dh);
                    accumulate(&mut grads, *gb, dgb);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::PinballMean {
                    pred,
                    targets,
                    quantiles,
                } => {
                    let pv = &self.nodes[pred.0].value;
                    let scale = g[0] / pv.len() as f64;
                    let dp = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(quantiles)
                        .map(|((&yhat, &y), &q)| {
                            let ind = if y <= yhat { 1.0 } else { 0.0 };
                            scale * (ind - q)
                        })
                        .collect();
                    accumulate(&mut grads, *pred, dp);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, c) in existing.iter_mut().zip(&contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}
