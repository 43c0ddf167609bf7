//! Named-tensor checkpoint.
//!
//! ```text
//! magic        8 bytes   "NARCKPT1"
//! header_len   u32 LE
//! header       JSON (CheckpointHeader)
//! data         f64 LE: every parameter tensor in table order, then, when
//!              the header has `adam_t`, the first and second Adam moments
//!              in the same order
//! ```
//!
//! Tensors are row-major `rows x cols`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ParamStore};
use crate::objective::{AdamState, TrainConfig, Trainer};
use crate::traces::AlgorithmId;

pub const MAGIC: &[u8; 8] = b"NARCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_config: ModelConfig,
    pub algorithms: Vec<AlgorithmId>,
    pub schema_hash: String,
    /// Optimizer steps applied.
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_t: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: usize) -> Self {
        Self {
            header: CheckpointHeader {
                model_config: model.config.clone(),
                algorithms: model.algorithms().to_vec(),
                schema_hash: model.schema_hash(),
                step,
                train_config: None,
                adam_t: None,
                tensors: table(&model.params),
            },
            params: model.params.clone(),
            adam: None,
        }
    }

    /// Full resumable state of a trainer.
    pub fn from_trainer(trainer: &Trainer) -> Self {
        let mut c = Self::from_model(&trainer.model, trainer.step);
        c.header.train_config = Some(trainer.config.clone());
        c.header.adam_t = Some(trainer.adam.t);
        c.adam = Some(trainer.adam.clone());
        c
    }

    /// Rebuilds the model, checking the stored schema hash against the
    /// current algorithm schemas and, when given, the expected config.
    pub fn model(&self, expected: Option<&ModelConfig>) -> Result<Model> {
        if let Some(cfg) = expected {
            if cfg != &self.header.model_config {
                return Err(Error::SchemaMismatch("checkpoint model config differs from the requested one".into()));
            }
        }
        let mut model = Model::new(self.header.model_config.clone(), &self.header.algorithms)?;
        if model.schema_hash() != self.header.schema_hash {
            return Err(Error::SchemaMismatch("checkpoint schema hash differs from the current schemas".into()));
        }
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    /// Restores a trainer positioned after the checkpointed step.
    pub fn resume<'a>(&self, config: TrainConfig, tasks: &'a [crate::objective::TaskData]) -> Result<Trainer<'a>> {
        if let Some(saved) = &self.header.train_config {
            if saved != &config {
                return Err(Error::SchemaMismatch("checkpoint train config differs from the requested one".into()));
            }
        }
        let adam = self.adam.clone().ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let mut trainer = Trainer::new(self.model(None)?, config, tasks)?;
        trainer.adam = adam;
        trainer.step = self.header.step;
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |arrays: &[Array2<f64>]| {
            for a in arrays {
                a.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        };
        put(self.params.values());
        if let Some(adam) = &self.adam {
            put(&adam.m);
            put(&adam.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < len {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..len])?;
        let mut data = &body[len..];
        let mut take = |e: &TensorEntry| -> Result<Array2<f64>> {
            let k = e.rows * e.cols;
            if data.len() < 8 * k {
                return Err(Error::Format(format!("truncated tensor `{}`", e.name)));
            }
            let (head, rest) = data.split_at(8 * k);
            data = rest;
            let v = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Array2::from_shape_vec((e.rows, e.cols), v).map_err(|e| Error::Format(e.to_string()))
        };
        let mut params = ParamStore::default();
        for e in &header.tensors {
            let a = take(e)?;
            params.insert(&e.name, a)?;
        }
        let adam = match header.adam_t {
            Some(t) => {
                let m = header.tensors.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
                let v = header.tensors.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        if !data.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", data.len())));
        }
        Ok(Self { header, params, adam })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn table(params: &ParamStore) -> Vec<TensorEntry> {
    params.iter().map(|(name, v)| TensorEntry { name: name.to_string(), rows: v.nrows(), cols: v.ncols() }).collect()
}
