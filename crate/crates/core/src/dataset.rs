//! Trajectory container, one file per split.
//!
//! ```text
//! magic        8 bytes   "NARTRACE"
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON (DatasetHeader)
//! records      `count` trajectories, each:
//!   n          u32 LE
//!   T          u32 LE    number of hint steps
//!   inputs     every input spec in schema order
//!   hints      T frames, each every hint spec in schema order
//!   outputs    every output spec in schema order
//! ```
//!
//! A tensor is `spec.len(n)` little-endian values with no length prefix:
//! `i32` target indices for pointers, `f32` for everything else. Edge
//! tensors are row-major over `(i, j)`; categorical tensors hold one one-hot
//! row of `num_classes` values per element.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traces::{
    run_algorithm, sample_instance, validate_trajectory, AlgorithmId, FeatureMap, FeatureSpec, FeatureType,
    ProblemInstance, Schema, Stage, Tensor, Trajectory,
};

pub const MAGIC: &[u8; 8] = b"NARTRACE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub algorithm: AlgorithmId,
    pub split: String,
    pub schema: Vec<FeatureSpec>,
    pub schema_hash: String,
    pub count: usize,
    /// Node counts the split was drawn from.
    pub sizes: Vec<usize>,
    /// Instance `k` was sampled with seed `seed_base + k`.
    pub seed_base: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Samples `count` trajectories cycling through `sizes`; trajectory `k`
    /// has `sizes[k % len]` nodes and seed `seed_base + k`.
    pub fn generate(algorithm: AlgorithmId, split: &str, sizes: &[usize], count: usize, seed_base: u64) -> Result<Self> {
        if sizes.is_empty() && count > 0 {
            return Err(Error::InvalidConfig(format!("no sizes given for the {split} split")));
        }
        let trajectories = (0..count)
            .map(|k| run_algorithm(&sample_instance(algorithm, sizes[k % sizes.len()], seed_base + k as u64)?))
            .collect::<Result<Vec<_>>>()?;
        let schema = algorithm.schema();
        Ok(Self {
            header: DatasetHeader {
                format_version: FORMAT_VERSION,
                algorithm,
                split: split.to_string(),
                schema_hash: schema.hash(),
                schema: schema.0,
                count,
                sizes: sizes.to_vec(),
                seed_base,
            },
            trajectories,
        })
    }

    pub fn max_n(&self) -> usize {
        self.trajectories.iter().map(Trajectory::n).max().unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.header.count != self.trajectories.len() {
            return Err(Error::Format("header count differs from the trajectory count".into()));
        }
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let schema = Schema(self.header.schema.clone());
        for t in &self.trajectories {
            if t.algorithm() != self.header.algorithm {
                return Err(Error::SchemaMismatch(format!("{} trajectory in a {} dataset", t.algorithm(), self.header.algorithm)));
            }
            let n = t.n();
            out.extend_from_slice(&(n as u32).to_le_bytes());
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            write_stage(&mut out, &schema, Stage::Input, &t.instance.inputs, n)?;
            for h in &t.hints {
                write_stage(&mut out, &schema, Stage::Hint, h, n)?;
            }
            write_stage(&mut out, &schema, Stage::Output, &t.outputs, n)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated dataset magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a trajectory dataset".into()));
        }
        let len = read_u32(&mut r)? as usize;
        if r.len() < len {
            return Err(Error::Format("truncated dataset header".into()));
        }
        let header: DatasetHeader = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", header.format_version)));
        }
        let expected = header.algorithm.schema();
        if expected.0 != header.schema || expected.hash() != header.schema_hash {
            return Err(Error::SchemaMismatch(format!("dataset schema differs from the {} schema", header.algorithm)));
        }
        let mut trajectories = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let n = read_u32(&mut r)? as usize;
            let steps = read_u32(&mut r)? as usize;
            if steps > header.algorithm.max_hint_steps(n) {
                return Err(Error::Format(format!("trajectory declares {steps} hint steps for n={n}")));
            }
            let inputs = read_stage(&mut r, &expected, Stage::Input, n)?;
            let hints = (0..steps).map(|_| read_stage(&mut r, &expected, Stage::Hint, n)).collect::<Result<_>>()?;
            let outputs = read_stage(&mut r, &expected, Stage::Output, n)?;
            let t = Trajectory { instance: ProblemInstance { algorithm: header.algorithm, n, inputs }, hints, outputs };
            validate_trajectory(&t)?;
            trajectories.push(t);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after the last trajectory", r.len())));
        }
        Ok(Self { header, trajectories })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated trajectory record".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn write_stage(out: &mut Vec<u8>, schema: &Schema, stage: Stage, map: &FeatureMap, n: usize) -> Result<()> {
    for spec in schema.stage(stage) {
        let t = map.get(&spec.name).ok_or_else(|| Error::SchemaMismatch(format!("missing `{}`", spec.name)))?;
        t.check(spec, n)?;
        match t {
            Tensor::Index(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Tensor::Float(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(())
}

fn read_stage(r: &mut &[u8], schema: &Schema, stage: Stage, n: usize) -> Result<FeatureMap> {
    let mut map = FeatureMap::new();
    for spec in schema.stage(stage) {
        let len = spec.len(n);
        if r.len() < 4 * len {
            return Err(Error::Format(format!("truncated tensor `{}`", spec.name)));
        }
        let (data, rest) = r.split_at(4 * len);
        *r = rest;
        let words = data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let t = if spec.kind == FeatureType::Pointer {
            Tensor::Index(words.map(i32::from_le_bytes).collect())
        } else {
            Tensor::Float(words.map(f32::from_le_bytes).collect())
        };
        map.insert(spec.name.clone(), t);
    }
    Ok(map)
}
