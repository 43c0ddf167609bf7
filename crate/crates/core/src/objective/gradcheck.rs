use serde::{Deserialize, Serialize};

use super::loss_and_grad;
use crate::error::Result;
use crate::model::Model;
use crate::traces::Trajectory;

/// Analytic against central-difference gradient for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖a - n‖ / max(‖a‖, ‖n‖, 1e-8)`.
    pub rel_error: f64,
}

/// Compares the backward pass against central differences of the total
/// objective, one entry per parameter tensor.
pub fn gradient_check(model: &Model, traj: &Trajectory, lambda: f64, eps: f64) -> Result<Vec<GradCheck>> {
    let (_, analytic) = loss_and_grad(model, traj, lambda, true)?;
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (id, a) in analytic.iter().enumerate() {
        let mut numeric = a.clone();
        for k in 0..a.len() {
            let set = |m: &mut Model, v: f64| m.params.get_mut(id).as_slice_mut().unwrap()[k] = v;
            let orig = probe.params.get(id).as_slice().unwrap()[k];
            set(&mut probe, orig + eps);
            let up = loss_and_grad(&probe, traj, lambda, true)?.0.total;
            set(&mut probe, orig - eps);
            let down = loss_and_grad(&probe, traj, lambda, true)?.0.total;
            set(&mut probe, orig);
            numeric.as_slice_mut().unwrap()[k] = (up - down) / (2.0 * eps);
        }
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = (a - &numeric).iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(GradCheck {
            name: model.params.name(id).to_string(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: diff / an.max(nn).max(1e-8),
        });
    }
    Ok(out)
}
