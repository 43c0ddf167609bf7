use serde::{Deserialize, Serialize};

use super::{RunLog, TaskData, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{HistoryMode, Model, ModelConfig};

/// Fraction of the planned schedule the pilot runs for.
pub const PILOT_FRACTION: f64 = 0.6;

/// Fraction of the pilot's records, counted back from its end, averaged into
/// the loss and penalty estimates.
const SMOOTHING_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    /// Smoothed unpenalised loss at the end of the pilot.
    pub l_hat: f64,
    /// Smoothed raw gate penalty at the end of the pilot.
    pub p_hat: f64,
    pub pilot_steps: usize,
    pub window: usize,
    /// The pilot's gates were all zero, so λ fell back to 0.
    pub degenerate: bool,
    #[serde(skip)]
    pub pilot_log: RunLog,
}

/// `λ = L̂ / P̂`, so that `λ P̂ = L̂`: the penalty is half of the penalised
/// loss. A zero penalty gives `λ = 0` and the degenerate flag.
pub fn lambda_ratio(l_hat: f64, p_hat: f64) -> (f64, bool) {
    if p_hat == 0.0 {
        (0.0, true)
    } else {
        (l_hat / p_hat, false)
    }
}

/// Means of `hint_loss + output_loss` and `gate_penalty_raw` over the last
/// `window` records of a pilot log.
pub fn lambda_from_log(log: &RunLog, window: usize) -> Result<(f64, f64)> {
    if log.is_empty() || window == 0 {
        return Err(Error::MissingTelemetry("empty pilot log".into()));
    }
    let tail = &log.records[log.len().saturating_sub(window)..];
    let m = tail.len() as f64;
    let l = tail.iter().map(|r| r.hint_loss + r.output_loss).sum::<f64>() / m;
    let p = tail.iter().map(|r| r.gate_penalty_raw).sum::<f64>() / m;
    Ok((l, p))
}

/// Runs a gated λ=0 pilot on the full learning-rate schedule, stopped at
/// [`PILOT_FRACTION`] of the planned steps, and derives λ from its tail.
pub fn calibrate_lambda(data: &[TaskData], model_config: &ModelConfig, train_config: &TrainConfig) -> Result<Calibration> {
    let pilot_cfg = ModelConfig { history_mode: HistoryMode::Gated, lambda: 0.0, ..model_config.clone() };
    let pilot_steps = ((train_config.steps as f64) * PILOT_FRACTION).round().max(1.0) as usize;
    let algos: Vec<_> = data.iter().map(|d| d.algorithm).collect();
    let model = Model::new(pilot_cfg, &algos)?;
    let mut trainer = Trainer::new(model, train_config.clone(), data)?;
    trainer.validate = false;
    let mut log = RunLog::default();
    trainer.run_until(pilot_steps, |_, r| {
        log.push(r.clone());
        Ok(())
    })?;
    let window = ((pilot_steps as f64) * SMOOTHING_FRACTION).ceil().max(1.0) as usize;
    let (l_hat, p_hat) = lambda_from_log(&log, window)?;
    let (lambda, degenerate) = lambda_ratio(l_hat, p_hat);
    if degenerate {
        log::warn!("DegenerateGates: pilot gate penalty is zero, using lambda = 0");
    }
    Ok(Calibration { lambda, l_hat, p_hat, pilot_steps, window, degenerate, pilot_log: log })
}
