use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::spec::{FeatureSpec, FeatureType, Location};
use crate::error::{Error, Result};

/// Raw probe values. Pointers are stored as target node indices, everything
/// else as `f32` (one-hot rows for mask_one and categorical features).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tensor {
    Float(Vec<f32>),
    Index(Vec<i32>),
}

/// Probe name to value, for one stage at one time step.
pub type FeatureMap = BTreeMap<String, Tensor>;

impl Tensor {
    pub fn one_hot(index: usize, n: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Tensor::Float(v)
    }

    pub fn pointers(targets: &[usize]) -> Self {
        Tensor::Index(targets.iter().map(|&t| t as i32).collect())
    }

    /// Pointer encoding of a node ordering: each node points at its
    /// predecessor, the head points at itself.
    pub fn chain(order: &[usize]) -> Self {
        let mut pred = vec![0usize; order.len()];
        for (pos, &node) in order.iter().enumerate() {
            pred[node] = if pos == 0 { node } else { order[pos - 1] };
        }
        Tensor::pointers(&pred)
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::Float(v) => v.len(),
            Tensor::Index(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_floats(&self) -> Option<&[f32]> {
        match self {
            Tensor::Float(v) => Some(v),
            Tensor::Index(_) => None,
        }
    }

    pub fn as_indices(&self) -> Option<&[i32]> {
        match self {
            Tensor::Index(v) => Some(v),
            Tensor::Float(_) => None,
        }
    }

    /// Checks shape and value domain of `self` against `spec` for `n` nodes.
    pub fn check(&self, spec: &FeatureSpec, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::SchemaMismatch(format!("`{}`: {msg}", spec.name)));
        if self.len() != spec.len(n) {
            return bad(format!("expected {} values, got {}", spec.len(n), self.len()));
        }
        match (spec.kind, self) {
            (FeatureType::Pointer, Tensor::Index(v)) => {
                if let Some(p) = v.iter().find(|&&p| p < 0 || p as usize >= n) {
                    return bad(format!("pointer {p} outside [0, {n})"));
                }
            }
            (FeatureType::Pointer, Tensor::Float(_)) => return bad("pointer stored as floats".into()),
            (_, Tensor::Index(_)) => return bad("non-pointer stored as indices".into()),
            (FeatureType::Scalar, Tensor::Float(v)) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return bad("non-finite scalar".into());
                }
            }
            (FeatureType::Mask, Tensor::Float(v)) => {
                if v.iter().any(|&x| x != 0.0 && x != 1.0) {
                    return bad("mask value outside {0,1}".into());
                }
            }
            (FeatureType::MaskOne, Tensor::Float(v)) => {
                // one-hot across the whole location (all nodes or all edges)
                if !is_one_hot(v) {
                    return bad("mask_one is not one-hot".into());
                }
            }
            (FeatureType::Categorical, Tensor::Float(v)) => {
                let c = spec.width();
                if !v.chunks(c).all(is_one_hot) {
                    return bad("categorical row is not one-hot".into());
                }
            }
        }
        if spec.kind == FeatureType::MaskOne && spec.location == Location::Graph {
            return bad("mask_one on graph".into());
        }
        Ok(())
    }
}

fn is_one_hot(v: &[f32]) -> bool {
    v.iter().all(|&x| x == 0.0 || x == 1.0) && v.iter().filter(|&&x| x == 1.0).count() == 1
}

/// Index of the hot entry, if `v` is one-hot.
pub fn hot_index(v: &[f32]) -> Option<usize> {
    if is_one_hot(v) {
        v.iter().position(|&x| x == 1.0)
    } else {
        None
    }
}

/// Follows a predecessor chain from its head. Fails unless the pointers form
/// a single list covering every node.
pub fn chain_order(pred: &[i32]) -> Option<Vec<usize>> {
    let n = pred.len();
    let mut succ = vec![usize::MAX; n];
    let mut head = None;
    for (node, &p) in pred.iter().enumerate() {
        let p = usize::try_from(p).ok().filter(|&p| p < n)?;
        if p == node {
            if head.replace(node).is_some() {
                return None;
            }
        } else {
            if succ[p] != usize::MAX {
                return None;
            }
            succ[p] = node;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut cur = head?;
    loop {
        order.push(cur);
        if order.len() > n {
            return None;
        }
        match succ[cur] {
            usize::MAX => break,
            next => cur = next,
        }
    }
    (order.len() == n).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::spec::Stage;

    #[test]
    fn chain_roundtrip() {
        let order = vec![1, 2, 0];
        let t = Tensor::chain(&order);
        assert_eq!(t, Tensor::Index(vec![2, 1, 1]));
        assert_eq!(chain_order(t.as_indices().unwrap()).unwrap(), order);
    }

    #[test]
    fn chain_rejects_cycles_and_forks() {
        assert!(chain_order(&[1, 0]).is_none());
        assert!(chain_order(&[0, 0, 0]).is_none());
        assert!(chain_order(&[0, 1]).is_none());
        assert!(chain_order(&[0, 5]).is_none());
    }

    #[test]
    fn check_domains() {
        let ptr = FeatureSpec::new("p", Stage::Hint, Location::Node, FeatureType::Pointer);
        assert!(Tensor::Index(vec![0, 2, 1]).check(&ptr, 3).is_ok());
        assert!(Tensor::Index(vec![0, 3, 1]).check(&ptr, 3).is_err());
        let m1 = FeatureSpec::new("i", Stage::Hint, Location::Node, FeatureType::MaskOne);
        assert!(Tensor::one_hot(1, 3).check(&m1, 3).is_ok());
        assert!(Tensor::Float(vec![1.0, 1.0, 0.0]).check(&m1, 3).is_err());
        let cat = FeatureSpec::categorical("c", Stage::Hint, Location::Graph, 3);
        assert!(Tensor::one_hot(2, 3).check(&cat, 5).is_ok());
        let sc = FeatureSpec::new("x", Stage::Input, Location::Edge, FeatureType::Scalar);
        assert!(Tensor::Float(vec![0.0; 4]).check(&sc, 2).is_ok());
        assert!(Tensor::Float(vec![f32::NAN; 4]).check(&sc, 2).is_err());
    }
}
