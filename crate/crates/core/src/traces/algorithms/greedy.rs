use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Algorithm;
use crate::error::{Error, Result};
use crate::traces::probe::{self, map, mask_tensor};
use crate::traces::sampling::positions;
use crate::traces::spec::{FeatureSpec, FeatureType::*, Location::*, Schema, Stage::*};
use crate::traces::{FeatureMap, Recorder, Tensor};

/// Greedy interval scheduling by earliest finish time. After the first step
/// `pred_h` holds the finish-time order, `m` the interval under
/// consideration and `k` the last selected one.
pub(crate) struct ActivitySelector;

fn by_finish(f: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f[a].partial_cmp(&f[b]).unwrap().then(a.cmp(&b)));
    idx
}

fn hint(order: &[usize], selected: &[bool], m: usize, k: usize) -> FeatureMap {
    let n = order.len();
    map([
        ("pred_h", Tensor::chain(order)),
        ("selected_h", mask_tensor(selected)),
        ("m", Tensor::one_hot(m, n)),
        ("k", Tensor::one_hot(k, n)),
    ])
}

impl Algorithm for ActivitySelector {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("s", Input, Node, Scalar),
            FeatureSpec::new("f", Input, Node, Scalar),
            FeatureSpec::new("pred_h", Hint, Node, Pointer),
            FeatureSpec::new("selected_h", Hint, Node, Mask),
            FeatureSpec::new("m", Hint, Node, MaskOne),
            FeatureSpec::new("k", Hint, Node, MaskOne),
            FeatureSpec::new("selected", Output, Node, Mask),
        ])
        .expect("valid schema")
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let (mut s, mut f) = (Vec::with_capacity(n), Vec::with_capacity(n));
        while s.len() < n {
            let (a, b): (f32, f32) = (rng.gen(), rng.gen());
            if a == b || f.contains(&a.max(b)) {
                continue;
            }
            s.push(a.min(b));
            f.push(a.max(b));
        }
        map([
            ("pos", Tensor::Float(positions(n))),
            ("s", Tensor::Float(s)),
            ("f", Tensor::Float(f)),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let s = probe::floats(inputs, "s")?;
        let f = probe::floats(inputs, "f")?;
        let identity: Vec<usize> = (0..n).collect();
        let mut selected = vec![false; n];
        rec.push(hint(&identity, &selected, 0, 0))?;
        let ind = by_finish(f);
        selected[ind[0]] = true;
        let mut k = ind[0];
        rec.push(hint(&ind, &selected, ind[0], k))?;
        for &m in &ind[1..] {
            if s[m] >= f[k] {
                selected[m] = true;
                k = m;
            }
            rec.push(hint(&ind, &selected, m, k))?;
        }
        Ok(map([("selected", mask_tensor(&selected))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, h: &FeatureMap) -> Result<FeatureMap> {
        let s = probe::floats(inputs, "s")?;
        let f = probe::floats(inputs, "f")?;
        let order = probe::order(h, "pred_h")?;
        let mut selected = probe::mask(h, "selected_h")?;
        let m = probe::hot(h, "m")?;
        let mut k = probe::hot(h, "k")?;
        if !selected.iter().any(|&x| x) {
            // nothing chosen yet: sort by finish time and take the first
            let ind = by_finish(f);
            selected[ind[0]] = true;
            return Ok(hint(&ind, &selected, ind[0], ind[0]));
        }
        if !selected[k] {
            return Err(Error::InvalidHintState("k marks an unselected interval".into()));
        }
        let at = order.iter().position(|&x| x == m).unwrap();
        if at + 1 >= n {
            return Ok(h.clone());
        }
        let next = order[at + 1];
        if s[next] >= f[k] {
            selected[next] = true;
            k = next;
        }
        Ok(hint(&order, &selected, next, k))
    }

    /// Exhaustive search over subsets: maximum number of pairwise compatible
    /// intervals, ties broken by the lexicographically smallest sequence of
    /// finish times (the set earliest-finish greedy produces).
    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let s = probe::floats(inputs, "s")?;
        let f = probe::floats(inputs, "f")?;
        let mut best: Option<(usize, Vec<f32>, u32)> = None;
        for subset in 0u32..(1u32 << n) {
            let mut members: Vec<usize> = (0..n).filter(|&i| subset >> i & 1 == 1).collect();
            members.sort_by(|&a, &b| f[a].partial_cmp(&f[b]).unwrap());
            if !members.windows(2).all(|w| s[w[1]] >= f[w[0]]) {
                continue;
            }
            let finishes: Vec<f32> = members.iter().map(|&i| f[i]).collect();
            let better = match &best {
                None => true,
                Some((count, fin, _)) => {
                    members.len() > *count
                        || (members.len() == *count
                            && finishes.partial_cmp(fin) == Some(std::cmp::Ordering::Less))
                }
            };
            if better {
                best = Some((members.len(), finishes, subset));
            }
        }
        let subset = best.map(|b| b.2).unwrap_or(0);
        let selected: Vec<bool> = (0..n).map(|i| subset >> i & 1 == 1).collect();
        Ok(map([("selected", mask_tensor(&selected))]))
    }
}
