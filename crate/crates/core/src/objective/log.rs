use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::traces::AlgorithmId;

/// One training step. Every record describes the parameters before that
/// step's update: the batch losses and, on evaluation steps, validation
/// metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub algorithm: AlgorithmId,
    pub lr: f64,
    pub total: f64,
    /// Batch mean of the per-trajectory mean over scored steps.
    pub hint_loss: f64,
    /// Batch mean of the per-trajectory sum over scored steps.
    pub hint_loss_sum: f64,
    pub output_loss: f64,
    pub gate_penalty_raw: f64,
    pub lambda: f64,
    /// Entry `t` is the batch mean of the step `t + 1` hint loss, counting
    /// trajectories without that step as zero; the entries sum to
    /// `hint_loss_sum`.
    pub per_exec_step_losses: Vec<f64>,
    /// Trajectories in the batch that have each step.
    pub per_exec_step_counts: Vec<usize>,
    pub batch_size: usize,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_micro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub val_by_algorithm: BTreeMap<AlgorithmId, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_line(r: &LogRecord) -> Result<String> {
        Ok(serde_json::to_string(r)?)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            writeln!(w, "{}", Self::record_line(r)?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut log = RunLog::default();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("run log line {}: {e}", k + 1)))?;
            log.push(rec);
        }
        Ok(log)
    }

    /// SHA-256 of the JSONL encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?.as_bytes())))
    }

    /// Keeps only records of steps before `step`.
    pub fn truncate_to(&mut self, step: usize) {
        self.records.retain(|r| r.step < step);
    }
}
