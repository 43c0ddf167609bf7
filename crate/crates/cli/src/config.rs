//! Experiment configuration: one TOML file, with `--set section.key=value`
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use nar_core::model::{HistoryMode, ModelConfig};
use nar_core::objective::{Schedule, TrainConfig};
use nar_core::traces::AlgorithmId;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub gate_hidden_dim: usize,
    pub use_triplets: bool,
    /// Gate penalty weight; calibrated automatically when absent.
    pub lambda: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { hidden_dim: m.hidden_dim, gate_hidden_dim: m.gate_hidden_dim, use_triplets: m.use_triplets, lambda: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub clip_norm: f64,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            schedule: t.schedule,
            clip_norm: t.clip_norm,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Offsets every split's instance seeds.
    pub seed: u64,
    pub train_sizes: Vec<usize>,
    pub train_count: usize,
    pub val_sizes: Vec<usize>,
    pub val_count: usize,
    pub test_sizes: Vec<usize>,
    pub test_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: 0,
            train_sizes: vec![4, 5, 6, 7, 8],
            train_count: 1000,
            val_sizes: vec![8],
            val_count: 64,
            test_sizes: vec![16],
            test_count: 32,
        }
    }
}

/// The three dataset splits.
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Instance seeds of split `k` start at `k * SPLIT_SEED_STRIDE`, so splits
/// never share an instance seed while counts stay below the stride.
pub const SPLIT_SEED_STRIDE: u64 = 1 << 40;

impl DataSection {
    pub fn split(&self, split: &str) -> CliResult<(&[usize], usize, u64)> {
        let k = SPLITS.iter().position(|s| *s == split).ok_or_else(|| CliError::Config(format!("unknown split `{split}`")))?;
        let base = k as u64 * SPLIT_SEED_STRIDE + self.seed * (1 << 20);
        Ok(match k {
            0 => (&self.train_sizes, self.train_count, base),
            1 => (&self.val_sizes, self.val_count, base),
            _ => (&self.test_sizes, self.test_count, base),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<AlgorithmId>,
    pub history_mode: HistoryMode,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Defaults to `{output_dir}/data`.
    pub data_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![AlgorithmId::InsertionSort],
            history_mode: HistoryMode::Baseline,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            data_dir: None,
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key.path=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut value: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.algorithms.is_empty() {
            return Err(CliError::Config("algorithms must not be empty".into()));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(CliError::Config("algorithms must be distinct".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if let Some(l) = self.model.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(CliError::Config("model.lambda must be a non-negative number".into()));
            }
        }
        for split in SPLITS {
            let (sizes, count, _) = self.data.split(split)?;
            if count > 0 && sizes.is_empty() {
                return Err(CliError::Config(format!("data.{split}_sizes must not be empty")));
            }
            if count as u64 >= 1 << 20 {
                return Err(CliError::Config(format!("data.{split}_count is too large")));
            }
            for a in &self.algorithms {
                if let Some(&n) = sizes.iter().find(|&&n| n < a.min_nodes()) {
                    return Err(CliError::Config(format!("{split} size {n} is below the {a} minimum {}", a.min_nodes())));
                }
            }
        }
        self.model_config(0, 0.0).validate()?;
        self.train_config(0).validate()?;
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    /// Directory name for the trained algorithm set.
    pub fn algorithm_key(&self) -> String {
        self.algorithms.iter().map(|a| a.name()).collect::<Vec<_>>().join("+")
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(self.algorithm_key()).join(self.history_mode.name()).join(seed.to_string())
    }

    pub fn model_config(&self, seed: u64, lambda: f64) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.model.hidden_dim,
            gate_hidden_dim: self.model.gate_hidden_dim,
            history_mode: self.history_mode,
            use_triplets: self.model.use_triplets,
            lambda: if self.history_mode == HistoryMode::Gated { lambda } else { 0.0 },
            seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            schedule: t.schedule,
            clip_norm: t.clip_norm,
            eval_every: t.eval_every,
            seed,
        }
    }

    /// The config of a single run: one seed, everything else unchanged.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self { seeds: vec![seed], ..self.clone() }
    }

    /// Everything that must agree between runs placed side by side in a
    /// comparison: the config without mode, seeds, λ and output location.
    pub fn comparison_key(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.history_mode = HistoryMode::Baseline;
        c.seeds.clear();
        c.model.lambda = None;
        c.output_dir = PathBuf::new();
        c.data_dir = None;
        c.to_toml()
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    // bare words that are not valid TOML values are taken as strings
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{k}` in `{path}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = ExperimentConfig::parse(
            "algorithms = [\"minimum\"]\n[train]\nsteps = 50\n",
            &["train.steps=20".into(), "train.eval_every=10".into(), "history_mode=gated".into(), "model.lambda=0.5".into(), "seeds=[1,2]".into()],
        )
        .unwrap();
        assert_eq!(c.train.steps, 20);
        assert_eq!(c.history_mode, HistoryMode::Gated);
        assert_eq!(c.model.lambda, Some(0.5));
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.train.batch_size, TrainSection::default().batch_size);
        assert!(matches!(ExperimentConfig::parse("bogus = 1", &[]), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::parse("", &["seeds=[]".into()]), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::parse("", &["train.steps".into()]), Err(CliError::Config(_))));
        assert!(ExperimentConfig::parse("", &["algorithms=[\"kmp\"]".into()]).is_err());
    }

    #[test]
    fn split_seed_ranges_are_disjoint() {
        let d = DataSection::default();
        let (_, c0, b0) = d.split("train").unwrap();
        let (_, _, b1) = d.split("val").unwrap();
        let (_, _, b2) = d.split("test").unwrap();
        assert!(b0 + c0 as u64 <= b1 && b1 < b2);
    }
}
