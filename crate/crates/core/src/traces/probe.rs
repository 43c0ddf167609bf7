//! Typed accessors over feature maps used by the executors.

use super::tensor::{chain_order, hot_index, FeatureMap, Tensor};
use crate::error::{Error, Result};

fn missing(name: &str) -> Error {
    Error::InvalidHintState(format!("probe `{name}` missing or mistyped"))
}

pub(crate) fn floats<'a>(m: &'a FeatureMap, name: &str) -> Result<&'a [f32]> {
    m.get(name).and_then(Tensor::as_floats).ok_or_else(|| missing(name))
}

pub(crate) fn pointers(m: &FeatureMap, name: &str) -> Result<Vec<usize>> {
    let raw = m.get(name).and_then(Tensor::as_indices).ok_or_else(|| missing(name))?;
    let n = raw.len();
    raw.iter()
        .map(|&p| {
            usize::try_from(p)
                .ok()
                .filter(|&p| p < n)
                .ok_or_else(|| Error::InvalidHintState(format!("`{name}` pointer {p} out of range")))
        })
        .collect()
}

/// Edge pointers are stored row-major over (i, j) and point at nodes in [0, n).
pub(crate) fn edge_pointers(m: &FeatureMap, name: &str, n: usize) -> Result<Vec<usize>> {
    let raw = m.get(name).and_then(Tensor::as_indices).ok_or_else(|| missing(name))?;
    raw.iter()
        .map(|&p| {
            usize::try_from(p)
                .ok()
                .filter(|&p| p < n)
                .ok_or_else(|| Error::InvalidHintState(format!("`{name}` pointer {p} out of range")))
        })
        .collect()
}

pub(crate) fn hot(m: &FeatureMap, name: &str) -> Result<usize> {
    hot_index(floats(m, name)?)
        .ok_or_else(|| Error::InvalidHintState(format!("`{name}` is not one-hot")))
}

pub(crate) fn order(m: &FeatureMap, name: &str) -> Result<Vec<usize>> {
    let raw = m.get(name).and_then(Tensor::as_indices).ok_or_else(|| missing(name))?;
    chain_order(raw).ok_or_else(|| Error::InvalidHintState(format!("`{name}` is not a single chain")))
}

pub(crate) fn mask(m: &FeatureMap, name: &str) -> Result<Vec<bool>> {
    floats(m, name)?
        .iter()
        .map(|&x| match x {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::InvalidHintState(format!("`{name}` has mask value {v}"))),
        })
        .collect()
}

pub(crate) fn mask_tensor(m: &[bool]) -> Tensor {
    Tensor::Float(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

/// Builds a feature map from `(name, tensor)` pairs.
pub(crate) fn map<const K: usize>(entries: [(&str, Tensor); K]) -> FeatureMap {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
