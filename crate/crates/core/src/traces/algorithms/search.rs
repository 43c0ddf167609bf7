use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Algorithm;
use crate::error::{Error, Result};
use crate::traces::probe::{self, map};
use crate::traces::sampling::{distinct_keys, positions};
use crate::traces::spec::{FeatureSpec, FeatureType::*, Location::*, Schema, Stage::*};
use crate::traces::{FeatureMap, Recorder, Tensor};

/// Linear scan for the smallest key; `pred_h` is the fixed list order.
pub(crate) struct Minimum;

fn identity_chain(n: usize) -> Tensor {
    Tensor::chain(&(0..n).collect::<Vec<_>>())
}

impl Algorithm for Minimum {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("key", Input, Node, Scalar),
            FeatureSpec::new("pred_h", Hint, Node, Pointer),
            FeatureSpec::new("min_h", Hint, Node, MaskOne),
            FeatureSpec::new("i", Hint, Node, MaskOne),
            FeatureSpec::new("min", Output, Node, MaskOne),
        ])
        .expect("valid schema")
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        map([
            ("pos", Tensor::Float(positions(n))),
            ("key", Tensor::Float(distinct_keys(n, rng))),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        let hint = |m: usize, i: usize| {
            map([
                ("pred_h", identity_chain(n)),
                ("min_h", Tensor::one_hot(m, n)),
                ("i", Tensor::one_hot(i, n)),
            ])
        };
        let mut best = 0;
        rec.push(hint(best, 0))?;
        for i in 1..n {
            if a[best] > a[i] {
                best = i;
            }
            rec.push(hint(best, i))?;
        }
        Ok(map([("min", Tensor::one_hot(best, n))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        probe::order(hint, "pred_h")?;
        let i = probe::hot(hint, "i")?;
        let mut best = probe::hot(hint, "min_h")?;
        if i + 1 >= n {
            return Ok(hint.clone());
        }
        let next = i + 1;
        if a[best] > a[next] {
            best = next;
        }
        let mut out = hint.clone();
        out.insert("min_h".into(), Tensor::one_hot(best, n));
        out.insert("i".into(), Tensor::one_hot(next, n));
        Ok(out)
    }

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        let best = (0..n)
            .min_by(|&x, &y| a[x].partial_cmp(&a[y]).unwrap().then(x.cmp(&y)))
            .unwrap();
        Ok(map([("min", Tensor::one_hot(best, n))]))
    }
}

/// Lower-bound binary search over sorted keys: returns the first index whose
/// key is at least the target (the last index when none is).
///
/// `phase` records the outcome of the comparison that produced the current
/// state: 0 before any comparison, 1 after moving `high` down, 2 after moving
/// `low` up.
pub(crate) struct BinarySearch;

const PHASES: usize = 3;

fn search_hint(n: usize, low: usize, high: usize, phase: usize) -> FeatureMap {
    map([
        ("low", Tensor::one_hot(low, n)),
        ("high", Tensor::one_hot(high, n)),
        ("mid", Tensor::one_hot((low + high) / 2, n)),
        ("phase", Tensor::one_hot(phase, PHASES)),
    ])
}

impl Algorithm for BinarySearch {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("key", Input, Node, Scalar),
            FeatureSpec::new("target", Input, Graph, Scalar),
            FeatureSpec::new("low", Hint, Node, MaskOne),
            FeatureSpec::new("high", Hint, Node, MaskOne),
            FeatureSpec::new("mid", Hint, Node, MaskOne),
            FeatureSpec::categorical("phase", Hint, Graph, PHASES),
            FeatureSpec::new("return", Output, Node, MaskOne),
        ])
        .expect("valid schema")
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let mut keys = distinct_keys(n, rng);
        keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let target: f32 = rng.gen();
        map([
            ("pos", Tensor::Float(positions(n))),
            ("key", Tensor::Float(keys)),
            ("target", Tensor::Float(vec![target])),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        let x = probe::floats(inputs, "target")?[0];
        let (mut low, mut high) = (0, n - 1);
        rec.push(search_hint(n, low, high, 0))?;
        while low < high {
            let mid = (low + high) / 2;
            let phase = if x <= a[mid] {
                high = mid;
                1
            } else {
                low = mid + 1;
                2
            };
            rec.push(search_hint(n, low, high, phase))?;
        }
        Ok(map([("return", Tensor::one_hot(high, n))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        let x = probe::floats(inputs, "target")?[0];
        let (mut low, mut high) = (probe::hot(hint, "low")?, probe::hot(hint, "high")?);
        let mid = probe::hot(hint, "mid")?;
        probe::hot(hint, "phase")?;
        if low > high || mid != (low + high) / 2 {
            return Err(Error::InvalidHintState(format!(
                "inconsistent search window low={low} mid={mid} high={high}"
            )));
        }
        if low == high {
            return Ok(hint.clone());
        }
        let phase = if x <= a[mid] {
            high = mid;
            1
        } else {
            low = mid + 1;
            2
        };
        Ok(search_hint(n, low, high, phase))
    }

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let a = probe::floats(inputs, "key")?;
        let x = probe::floats(inputs, "target")?[0];
        let idx = a.iter().position(|&k| k >= x).unwrap_or(n - 1);
        Ok(map([("return", Tensor::one_hot(idx, n))]))
    }
}
