//! Conversions between stored feature tensors and model matrices.
//!
//! | type        | encoder input              | prediction shape | loss                         |
//! |-------------|----------------------------|------------------|------------------------------|
//! | scalar      | value                      | `rows × 1`       | mean squared error           |
//! | mask        | value                      | `rows × 1`       | binary cross-entropy (logit) |
//! | mask_one    | one-hot value              | `n × 1`          | cross-entropy over nodes     |
//! | categorical | one-hot, `C` columns       | `rows × C`       | cross-entropy over classes   |
//! | pointer     | one-hot as an edge feature | `n × n`          | cross-entropy per source     |
//! | edge pointer| two edge mean columns      | `n² × n`         | cross-entropy per edge       |
//!
//! `rows` is `n`, `n²` or `1` for node, edge and graph features. When a
//! prediction is fed back as the next step's hint it is softened: softmax for
//! mask_one, categorical and pointers, sigmoid for masks, raw for scalars.

use ndarray::Array2;

use super::tape::{Id, Tape};
use crate::error::{Error, Result};
use crate::traces::tensor::hot_index;
use crate::traces::{FeatureSpec, FeatureType, Location, Tensor};

fn floats<'a>(spec: &FeatureSpec, t: &'a Tensor) -> Result<&'a [f32]> {
    t.as_floats()
        .ok_or_else(|| Error::SchemaMismatch(format!("`{}` expected float data", spec.name)))
}

fn indices<'a>(spec: &FeatureSpec, t: &'a Tensor) -> Result<&'a [i32]> {
    t.as_indices()
        .ok_or_else(|| Error::SchemaMismatch(format!("`{}` expected index data", spec.name)))
}

fn check_len(spec: &FeatureSpec, t: &Tensor, n: usize) -> Result<()> {
    if t.len() != spec.len(n) {
        return Err(Error::SchemaMismatch(format!(
            "`{}` has {} values, expected {} for n={n}",
            spec.name,
            t.len(),
            spec.len(n)
        )));
    }
    Ok(())
}

/// Raw encoder input matrix for a ground-truth tensor.
pub fn encoder_input(spec: &FeatureSpec, t: &Tensor, n: usize) -> Result<Array2<f64>> {
    check_len(spec, t, n)?;
    let rows = spec.location.elements(n);
    match (spec.kind, spec.location) {
        (FeatureType::Pointer, Location::Node) => {
            let p = indices(spec, t)?;
            let mut m = Array2::zeros((n * n, 1));
            for (i, &j) in p.iter().enumerate() {
                m[[i * n + j as usize, 0]] = 1.0;
            }
            Ok(m)
        }
        (FeatureType::Pointer, _) => {
            let p = indices(spec, t)?;
            let mut m = Array2::zeros((n * n, 2));
            let inv = 1.0 / n as f64;
            for i in 0..n {
                for j in 0..n {
                    let k = p[i * n + j] as usize;
                    m[[i * n + k, 0]] += inv;
                    m[[k * n + j, 1]] += inv;
                }
            }
            Ok(m)
        }
        _ => {
            let v = floats(spec, t)?;
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::NumericalError(format!("`{}` contains {x}", spec.name)));
            }
            let cols = v.len() / rows;
            Ok(Array2::from_shape_fn((rows, cols), |(r, c)| v[r * cols + c] as f64))
        }
    }
}

/// Soft version of a prediction, shaped like [`encoder_input`].
pub(crate) fn soft_input(tape: &mut Tape, spec: &FeatureSpec, pred: Id, n: usize) -> Id {
    match (spec.kind, spec.location) {
        (FeatureType::Scalar, _) => pred,
        (FeatureType::Mask, _) => tape.sigmoid(pred),
        (FeatureType::MaskOne, _) => {
            let row = tape.reshape(pred, 1, n);
            let p = tape.softmax_rows(row);
            tape.reshape(p, n, 1)
        }
        (FeatureType::Categorical, _) => tape.softmax_rows(pred),
        (FeatureType::Pointer, Location::Node) => {
            let p = tape.softmax_rows(pred);
            tape.reshape(p, n * n, 1)
        }
        (FeatureType::Pointer, _) => {
            let p = tape.softmax_rows(pred);
            tape.edge_ptr_means(p, n)
        }
    }
}

/// Per-type loss of a prediction against its ground truth.
pub(crate) fn spec_loss(tape: &mut Tape, spec: &FeatureSpec, pred: Id, truth: &Tensor, n: usize) -> Result<Id> {
    check_len(spec, truth, n)?;
    let (rows, cols) = tape.shape(pred);
    if let Some(x) = tape.value(pred).iter().find(|x| !x.is_finite()) {
        return Err(Error::NumericalError(format!("prediction for `{}` contains {x}", spec.name)));
    }
    Ok(match spec.kind {
        FeatureType::Scalar | FeatureType::Mask => {
            let v = floats(spec, truth)?;
            let target = Array2::from_shape_fn((rows, cols), |(r, _)| v[r] as f64);
            if spec.kind == FeatureType::Scalar {
                tape.mse_mean(pred, target)
            } else {
                tape.bce_mean(pred, target)
            }
        }
        FeatureType::MaskOne => {
            let hot = hot_index(floats(spec, truth)?)
                .ok_or_else(|| Error::SchemaMismatch(format!("`{}` is not one-hot", spec.name)))?;
            let row = tape.reshape(pred, 1, n);
            tape.xent_rows(row, vec![hot])
        }
        FeatureType::Categorical => {
            let v = floats(spec, truth)?;
            let c = spec.num_classes.unwrap_or(1);
            let targets = v
                .chunks(c)
                .map(|ch| hot_index(ch).ok_or_else(|| Error::SchemaMismatch(format!("`{}` is not one-hot", spec.name))))
                .collect::<Result<Vec<_>>>()?;
            tape.xent_rows(pred, targets)
        }
        FeatureType::Pointer => {
            let targets = indices(spec, truth)?.iter().map(|&p| p as usize).collect();
            tape.xent_rows(pred, targets)
        }
    })
}

/// Loss of a detached prediction matrix against its ground truth.
pub fn hint_loss(pred: &Array2<f64>, truth: &Tensor, spec: &FeatureSpec, n: usize) -> Result<f64> {
    let empty = super::ParamStore::default();
    let mut tape = Tape::new(&empty);
    let expect = prediction_shape(spec, n);
    if pred.dim() != expect {
        return Err(Error::SchemaMismatch(format!(
            "prediction for `{}` has shape {:?}, expected {expect:?}",
            spec.name,
            pred.dim()
        )));
    }
    let p = tape.leaf(pred.clone());
    let l = spec_loss(&mut tape, spec, p, truth, n)?;
    Ok(tape.scalar(l))
}

/// Shape of the decoder output for `spec` on an `n`-node instance.
pub fn prediction_shape(spec: &FeatureSpec, n: usize) -> (usize, usize) {
    match (spec.kind, spec.location) {
        (FeatureType::Pointer, Location::Node) => (n, n),
        (FeatureType::Pointer, _) => (n * n, n),
        (FeatureType::Categorical, loc) => (loc.elements(n), spec.num_classes.unwrap_or(1)),
        (_, loc) => (loc.elements(n), 1),
    }
}
