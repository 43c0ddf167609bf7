use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::RunLog;

/// Normalised carried-state norm at each evaluation step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateTelemetry {
    pub steps: Vec<usize>,
    pub norm: Vec<f64>,
}

pub fn gate_norm_curve(log: &RunLog) -> Result<GateTelemetry> {
    let mut t = GateTelemetry::default();
    for r in &log.records {
        if let Some(g) = r.gate_norm {
            t.steps.push(r.step);
            t.norm.push(g);
        }
    }
    if t.steps.is_empty() {
        return Err(Error::MissingTelemetry("no record carries gate_norm".into()));
    }
    Ok(t)
}

/// Hint-loss curves per execution-step quartile (keys 1 to 4).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub buckets: BTreeMap<usize, Vec<(usize, f64)>>,
}

/// Quartile (1 to 4) of execution step `t` among `1..=len`.
pub fn quartile(t: usize, len: usize) -> usize {
    (4 * t).div_ceil(len).clamp(1, 4)
}

/// Splits each record's execution steps `1..=S` into quartiles and reports
/// the mean loss per trajectory-step inside each quartile. Quartiles with no
/// steps are left out for that record.
pub fn per_step_loss_curves(log: &RunLog) -> Result<LossCurves> {
    let mut out = LossCurves::default();
    for r in &log.records {
        let s = r.per_exec_step_losses.len();
        if r.per_exec_step_counts.len() != s {
            return Err(Error::MissingTelemetry(format!("step {}: per-step counts missing", r.step)));
        }
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for t in 1..=s {
            let q = quartile(t, s) - 1;
            sums[q] += r.per_exec_step_losses[t - 1] * r.batch_size as f64;
            counts[q] += r.per_exec_step_counts[t - 1];
        }
        for q in 0..4 {
            if counts[q] > 0 {
                out.buckets.entry(q + 1).or_default().push((r.step, sums[q] / counts[q] as f64));
            }
        }
    }
    if out.buckets.is_empty() {
        return Err(Error::MissingTelemetry("no per-execution-step losses in the run log".into()));
    }
    Ok(out)
}

/// Writes `step,value` rows.
pub fn write_curve_csv(mut w: impl Write, points: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
    writeln!(w, "step,value")?;
    for (s, v) in points {
        writeln!(w, "{s},{v}")?;
    }
    Ok(())
}
