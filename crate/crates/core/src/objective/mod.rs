//! Losses, the gate-penalised objective, λ calibration and training.
//!
//! For one trajectory with `S` scored steps:
//!
//! ```text
//! total = (1/S) Σ_t Σ_spec hint_loss_t + Σ_spec output_loss + λ · P
//! P     = (1/steps) Σ_t Σ_i ‖g_i^(t)‖₂
//! ```
//!
//! The per-type losses are listed in the table of [`crate::model`]'s feature
//! conversions: squared error for scalars, binary cross-entropy for masks,
//! cross-entropy for mask_one, categorical and pointer features. A batch
//! objective is the mean of the trajectory objectives.

mod calibrate;
mod gradcheck;
mod log;
mod train;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use crate::model::hint_loss;
pub use calibrate::{calibrate_lambda, lambda_from_log, lambda_ratio, Calibration, PILOT_FRACTION};
pub use gradcheck::{gradient_check, GradCheck};
pub use log::{LogRecord, RunLog};
pub use train::{lr_at, train, train_multi_task, AdamState, Schedule, TaskData, TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::model::tape::{Id, Tape};
use crate::model::{ForwardResult, Model, ParamStore};
use crate::traces::{Stage, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Per scored step, per hint feature.
    pub hint_losses: Vec<BTreeMap<String, f64>>,
    /// Per scored step, summed over hint features.
    pub step_losses: Vec<f64>,
    /// Mean of `step_losses` (zero without scored steps).
    pub hint_loss: f64,
    pub hint_loss_sum: f64,
    pub output_losses: BTreeMap<String, f64>,
    pub output_loss: f64,
    pub gate_penalty_raw: f64,
    pub lambda: f64,
    /// `lambda * gate_penalty_raw`.
    pub gate_penalty: f64,
    pub total: f64,
}

pub(crate) struct LossIds {
    pub total: Id,
    pub hint_spec: Vec<BTreeMap<String, Id>>,
    pub steps: Vec<Id>,
    pub hint_mean: Option<Id>,
    pub output_spec: BTreeMap<String, Id>,
    pub output: Id,
    pub penalty: Option<Id>,
}

/// Assembles the objective from prediction and gate nodes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    tape: &mut Tape,
    traj: &Trajectory,
    hint_preds: &[BTreeMap<String, Id>],
    output_preds: &BTreeMap<String, Id>,
    gates: &[Id],
    lambda: f64,
    include_penalty: bool,
) -> Result<LossIds> {
    let schema = traj.algorithm().schema();
    let n = traj.n();
    let scored = traj.len().saturating_sub(1);
    if hint_preds.len() != scored {
        return Err(Error::SchemaMismatch(format!(
            "{} hint predictions for a trajectory with {scored} scored steps",
            hint_preds.len()
        )));
    }
    let pred_of = |m: &BTreeMap<String, Id>, name: &str| {
        m.get(name).copied().ok_or_else(|| Error::SchemaMismatch(format!("no prediction for `{name}`")))
    };
    let mut hint_spec = Vec::with_capacity(scored);
    let mut steps = Vec::with_capacity(scored);
    for (k, preds) in hint_preds.iter().enumerate() {
        let truth = &traj.hints[k + 1];
        let mut per = BTreeMap::new();
        let mut terms = Vec::new();
        for spec in schema.stage(Stage::Hint) {
            let t = truth
                .get(&spec.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("hint {} lacks `{}`", k + 1, spec.name)))?;
            let l = crate::model::spec_loss_id(tape, spec, pred_of(preds, &spec.name)?, t, n)?;
            per.insert(spec.name.clone(), l);
            terms.push((l, 1.0));
        }
        steps.push(tape.lin_comb(&terms));
        hint_spec.push(per);
    }
    let hint_mean = if steps.is_empty() {
        None
    } else {
        let w = 1.0 / steps.len() as f64;
        Some(tape.lin_comb(&steps.iter().map(|&s| (s, w)).collect::<Vec<_>>()))
    };
    let mut output_spec = BTreeMap::new();
    let mut terms = Vec::new();
    for spec in schema.stage(Stage::Output) {
        let t = traj
            .outputs
            .get(&spec.name)
            .ok_or_else(|| Error::SchemaMismatch(format!("outputs lack `{}`", spec.name)))?;
        let l = crate::model::spec_loss_id(tape, spec, pred_of(output_preds, &spec.name)?, t, n)?;
        output_spec.insert(spec.name.clone(), l);
        terms.push((l, 1.0));
    }
    let output = tape.lin_comb(&terms);
    let penalty = if gates.is_empty() {
        None
    } else {
        let w = 1.0 / gates.len() as f64;
        let mut per_step = Vec::with_capacity(gates.len());
        for &g in gates {
            let norms = tape.row_l2_norm(g);
            per_step.push((tape.sum(norms), w));
        }
        Some(tape.lin_comb(&per_step))
    };
    let mut total_terms = Vec::new();
    if let Some(h) = hint_mean {
        total_terms.push((h, 1.0));
    }
    total_terms.push((output, 1.0));
    if let (Some(p), true) = (penalty, include_penalty) {
        total_terms.push((p, lambda));
    }
    let total = tape.lin_comb(&total_terms);
    Ok(LossIds { total, hint_spec, steps, hint_mean, output_spec, output, penalty })
}

pub(crate) fn breakdown(tape: &Tape, ids: &LossIds, lambda: f64) -> LossBreakdown {
    let step_losses: Vec<f64> = ids.steps.iter().map(|&s| tape.scalar(s)).collect();
    let raw = ids.penalty.map(|p| tape.scalar(p)).unwrap_or(0.0);
    LossBreakdown {
        hint_losses: ids
            .hint_spec
            .iter()
            .map(|m| m.iter().map(|(k, &v)| (k.clone(), tape.scalar(v))).collect())
            .collect(),
        hint_loss: ids.hint_mean.map(|h| tape.scalar(h)).unwrap_or(0.0),
        hint_loss_sum: step_losses.iter().sum(),
        step_losses,
        output_losses: ids.output_spec.iter().map(|(k, &v)| (k.clone(), tape.scalar(v))).collect(),
        output_loss: tape.scalar(ids.output),
        gate_penalty_raw: raw,
        lambda,
        gate_penalty: lambda * raw,
        total: tape.scalar(ids.total),
    }
}

/// Objective of one trajectory from detached forward results. Gate values
/// are taken from the records; non-gated records contribute no penalty.
pub fn total_loss(forward: &ForwardResult, traj: &Trajectory, lambda: f64) -> Result<LossBreakdown> {
    let empty = ParamStore::default();
    let mut tape = Tape::new(&empty);
    let leaves = |tape: &mut Tape, m: &BTreeMap<String, Array2<f64>>| -> BTreeMap<String, Id> {
        m.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect()
    };
    let hints: Vec<_> = forward.hint_predictions.iter().map(|m| leaves(&mut tape, m)).collect();
    let outputs = leaves(&mut tape, &forward.output_predictions);
    let gates: Vec<Id> = forward
        .records
        .iter()
        .filter_map(|r| r.gate_values.as_ref())
        .map(|g| tape.leaf(g.clone()))
        .collect();
    let ids = assemble(&mut tape, traj, &hints, &outputs, &gates, lambda, true)?;
    Ok(breakdown(&tape, &ids, lambda))
}

/// Objective and parameter gradients for one trajectory.
pub fn loss_and_grad(
    model: &Model,
    traj: &Trajectory,
    lambda: f64,
    include_penalty: bool,
) -> Result<(LossBreakdown, Vec<Array2<f64>>)> {
    let mut tape = Tape::new(&model.params);
    let (ids, _) = objective_on_tape(&mut tape, model, traj, lambda, include_penalty)?;
    let b = breakdown(&tape, &ids, lambda);
    let g = tape.backward(ids.total);
    Ok((b, g))
}

pub(crate) fn objective_on_tape(
    tape: &mut Tape,
    model: &Model,
    traj: &Trajectory,
    lambda: f64,
    include_penalty: bool,
) -> Result<(LossIds, crate::model::Unrolled)> {
    let u = model.unroll(tape, traj, &Default::default())?;
    let gates: Vec<Id> = u.steps.iter().filter_map(|s| s.gate).collect();
    let ids = assemble(tape, traj, &u.hint_preds, &u.output_preds, &gates, lambda, include_penalty)?;
    Ok((ids, u))
}

#[cfg(test)]
mod tests;
