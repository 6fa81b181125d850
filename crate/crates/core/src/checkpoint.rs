//! Checkpoint persistence on top of the shared container format.
//!
//! Parameters are stored under `param/<name>`, Adam moments under
//! `adam_m/<name>` and `adam_v/<name>` (always `f64`). The JSON header holds the
//! model and training configs, the feature registry, per-dataset
//! normalisation, random stream positions and the batch counter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Blob, Container};
use crate::data::{DatasetMeta, FeatureRegistry, SplitDataset};
use crate::error::{NiaqueError, Result};
use crate::model::{NiaqueConfig, NiaqueModel};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

/// Storage precision of parameter payloads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Bit-exact round trip; training resumes on the identical trajectory.
    #[default]
    F64,
    /// Half the size; forward outputs change at the 1e-7 relative level.
    F32,
}

/// Everything needed to resume a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    /// `data`, `dropout`, `augment`, `quantiles` stream positions.
    pub rngs: [RngState; 4],
    pub batch: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: NiaqueModel,
    pub registry: FeatureRegistry,
    pub datasets: Vec<DatasetMeta>,
    pub trainer: Option<TrainerState>,
    /// Validation pinball at the time of saving, when known.
    pub val_pinball: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    model: NiaqueConfig,
    registry: FeatureRegistry,
    datasets: Vec<DatasetMeta>,
    trainer: Option<TrainerState>,
    val_pinball: Option<f64>,
    adam_steps: u64,
    param_names: Vec<String>,
    precision: Precision,
}

const FORMAT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

impl Checkpoint {
    pub fn dataset(&self, name: &str) -> Option<&DatasetMeta> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Fails unless `ds` was trained on and re-ingested with the same target
    /// scaling and columns.
    pub fn check_dataset(&self, ds: &SplitDataset) -> Result<()> {
        let fail = |reason: &str| {
            Err(NiaqueError::Dataset {
                name: ds.meta.name.clone(),
                reason: reason.into(),
            })
        };
        match self.dataset(&ds.meta.name) {
            None => fail("not part of this checkpoint"),
            Some(m) if m.y_min != ds.meta.y_min || m.y_max != ds.meta.y_max || m.columns != ds.meta.columns => {
                fail("ingested differently than at training time (different data, seed or ingestion settings)")
            }
            Some(_) => Ok(()),
        }
    }

    pub fn to_container(&self, precision: Precision) -> Result<Container> {
        let params = self.model.params();
        let meta = Meta {
            format_version: FORMAT_VERSION,
            model: self.model.config().clone(),
            registry: self.registry.clone(),
            datasets: self.datasets.clone(),
            trainer: self.trainer.clone(),
            val_pinball: self.val_pinball,
            adam_steps: params.step_count(),
            param_names: params.iter().map(|(_, e)| e.name().to_string()).collect(),
            precision,
        };
        let mut c = Container::new(KIND, serde_json::to_value(&meta)?);
        for (_, e) in params.iter() {
            let shape = e.value().shape().to_vec();
            let data = e.value().data();
            let blob = match precision {
                Precision::F64 => Blob::F64(data.to_vec()),
                Precision::F32 => Blob::F32(data.iter().map(|&v| v as f32).collect()),
            };
            c.push(format!("param/{}", e.name()), shape.clone(), blob)?;
            c.push(format!("adam_m/{}", e.name()), shape.clone(), Blob::F64(e.first_moment().to_vec()))?;
            c.push(format!("adam_v/{}", e.name()), shape, Blob::F64(e.second_moment().to_vec()))?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != KIND {
            return Err(NiaqueError::Format(format!("expected a checkpoint, found `{}`", c.kind)));
        }
        let meta: Meta = serde_json::from_value(c.meta.clone())?;
        if meta.format_version != FORMAT_VERSION {
            return Err(NiaqueError::Format(format!(
                "unsupported checkpoint version {}",
                meta.format_version
            )));
        }
        let mut params = ParamStore::new();
        for name in &meta.param_names {
            let (shape, blob) = c.get(&format!("param/{name}"))?;
            let id = params.insert(name.clone(), Tensor::new(shape.to_vec(), blob.to_f64())?)?;
            let m = c.get(&format!("adam_m/{name}"))?.1.to_f64();
            let v = c.get(&format!("adam_v/{name}"))?.1.to_f64();
            params.restore_moments(id, m, v)?;
        }
        params.set_step_count(meta.adam_steps);
        Ok(Checkpoint {
            model: NiaqueModel::from_params(meta.model, params)?,
            registry: meta.registry,
            datasets: meta.datasets,
            trainer: meta.trainer,
            val_pinball: meta.val_pinball,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with(path, Precision::F64)
    }

    pub fn save_with(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        self.to_container(precision)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
