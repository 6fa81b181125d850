//! Named trainable parameters with gradient buffers and Adam moment state.

use std::collections::HashMap;

use crate::error::{NiaqueError, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// Ordered collection of parameters. Iteration order is insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NiaqueError::InvalidArgument(format!(
                "parameter `{name}` already registered"
            )));
        }
        let id = self.entries.len();
        let n = value.len();
        self.entries.push(ParamEntry {
            grad: Tensor::zeros(value.shape()),
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            name: name.clone(),
            value,
        });
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.entries[id.0].value.data_mut()
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.entries[id.0].grad.data_mut()
    }

    pub(crate) fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Clears Adam moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        for e in &mut self.entries {
            e.first_moment.fill(0.0);
            e.second_moment.fill(0.0);
        }
        self.step_count = 0;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn set_step_count(&mut self, n: u64) {
        self.step_count = n;
    }

    pub(crate) fn restore_moments(
        &mut self,
        id: ParamId,
        first: Vec<f64>,
        second: Vec<f64>,
    ) -> Result<()> {
        let e = &mut self.entries[id.0];
        if first.len() != e.value.len() || second.len() != e.value.len() {
            return Err(NiaqueError::Format(format!(
                "optimizer state for `{}` has the wrong length",
                e.name
            )));
        }
        e.first_moment = first;
        e.second_moment = second;
        Ok(())
    }
}

/// Adam hyper-parameters other than the learning rate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction. Gradients are left in place; the
/// caller zeroes them before the next accumulation.
pub fn adam_step(params: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(NiaqueError::InvalidArgument(format!("learning rate {lr}")));
    }
    if let Some(bad) = params
        .entries
        .iter()
        .find(|e| e.grad.data().iter().any(|g| !g.is_finite()))
    {
        return Err(NiaqueError::NonFiniteGrad(bad.name.clone()));
    }
    params.step_count += 1;
    let t = params.step_count as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    for e in &mut params.entries {
        let ParamEntry {
            value,
            grad,
            first_moment,
            second_moment,
            ..
        } = e;
        let vals = value.data_mut();
        for (((w, &g), m), v) in vals
            .iter_mut()
            .zip(grad.data())
            .zip(first_moment.iter_mut())
            .zip(second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
