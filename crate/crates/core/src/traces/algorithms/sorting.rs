//! Insertion sort and bubble sort over node keys. The current arrangement of
//! the array is carried as a predecessor chain (`pred_h`) over node ids.

use rand_chacha::ChaCha8Rng;

use super::Algorithm;
use crate::error::{Error, Result};
use crate::traces::probe::{self, map};
use crate::traces::sampling::{distinct_keys, positions};
use crate::traces::spec::{FeatureSpec, FeatureType::*, Location::*, Schema, Stage::*};
use crate::traces::{FeatureMap, Recorder, Tensor};

fn sort_schema() -> Schema {
    Schema::new(vec![
        FeatureSpec::new("pos", Input, Node, Scalar),
        FeatureSpec::new("key", Input, Node, Scalar),
        FeatureSpec::new("pred_h", Hint, Node, Pointer),
        FeatureSpec::new("i", Hint, Node, MaskOne),
        FeatureSpec::new("j", Hint, Node, MaskOne),
        FeatureSpec::new("pred", Output, Node, Pointer),
    ])
    .expect("valid schema")
}

fn sample_keys(n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    map([
        ("pos", Tensor::Float(positions(n))),
        ("key", Tensor::Float(distinct_keys(n, rng))),
    ])
}

fn sort_hint(order: &[usize], i: usize, j: usize) -> FeatureMap {
    let n = order.len();
    map([
        ("pred_h", Tensor::chain(order)),
        ("i", Tensor::one_hot(i, n)),
        ("j", Tensor::one_hot(j, n)),
    ])
}

/// Sorted order by key, ties broken by node index.
fn argsort(keys: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap().then(a.cmp(&b)));
    idx
}

/// One hint per outer-loop iteration. `j` marks the element being inserted,
/// `i` the element displaced from the insertion slot (the inserted element
/// itself when it stays in place).
pub(crate) struct InsertionSort;

impl Algorithm for InsertionSort {
    fn schema(&self) -> Schema {
        sort_schema()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        sample_keys(n, rng)
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let mut a = probe::floats(inputs, "key")?.to_vec();
        let mut a_pos: Vec<usize> = (0..n).collect();
        rec.push(sort_hint(&a_pos, 0, 0))?;
        for j in 1..n {
            let key = a[j];
            let mut i = j as isize - 1;
            while i >= 0 && a[i as usize] > key {
                a[i as usize + 1] = a[i as usize];
                a_pos[i as usize + 1] = a_pos[i as usize];
                i -= 1;
            }
            let slot = (i + 1) as usize;
            a[slot] = key;
            let displaced = a_pos[slot];
            a_pos[slot] = j;
            rec.push(sort_hint(&a_pos, displaced, j))?;
        }
        Ok(map([("pred", Tensor::chain(&a_pos))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let keys = probe::floats(inputs, "key")?;
        let mut order = probe::order(hint, "pred_h")?;
        let j = probe::hot(hint, "j")?;
        probe::hot(hint, "i")?;
        if j + 1 >= n {
            return Ok(hint.clone());
        }
        let next = j + 1;
        let elem = order[next];
        let mut slot = next;
        while slot > 0 && keys[order[slot - 1]] > keys[elem] {
            order[slot] = order[slot - 1];
            slot -= 1;
        }
        let displaced = order[slot];
        order[slot] = elem;
        Ok(sort_hint(&order, displaced, elem))
    }

    fn brute_force(&self, _n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let keys = probe::floats(inputs, "key")?;
        Ok(map([("pred", Tensor::chain(&argsort(keys)))]))
    }
}

/// One hint per compare-and-swap; `i` and `j` mark the nodes currently at
/// the outer and inner loop positions.
pub(crate) struct BubbleSort;

impl Algorithm for BubbleSort {
    fn schema(&self) -> Schema {
        sort_schema()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        sample_keys(n, rng)
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let mut a = probe::floats(inputs, "key")?.to_vec();
        let mut a_pos: Vec<usize> = (0..n).collect();
        rec.push(sort_hint(&a_pos, 0, 0))?;
        for i in 0..n.saturating_sub(1) {
            for j in (i + 1..n).rev() {
                if a[j] < a[j - 1] {
                    a.swap(j, j - 1);
                    a_pos.swap(j, j - 1);
                }
                rec.push(sort_hint(&a_pos, a_pos[i], a_pos[j]))?;
            }
        }
        Ok(map([("pred", Tensor::chain(&a_pos))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let keys = probe::floats(inputs, "key")?;
        let mut order = probe::order(hint, "pred_h")?;
        let at = |node: usize| order.iter().position(|&x| x == node).unwrap();
        let (pi, pj) = (at(probe::hot(hint, "i")?), at(probe::hot(hint, "j")?));
        let (ni, nj) = if pi == pj {
            if pi != 0 {
                return Err(Error::InvalidHintState(
                    "bubble sort markers coincide away from the start".into(),
                ));
            }
            (0, n.saturating_sub(1))
        } else if pj > pi + 1 {
            (pi, pj - 1)
        } else {
            (pi + 1, n - 1)
        };
        if n < 2 || ni + 1 >= n || nj <= ni {
            return Ok(hint.clone());
        }
        if keys[order[nj]] < keys[order[nj - 1]] {
            order.swap(nj, nj - 1);
        }
        Ok(sort_hint(&order, order[ni], order[nj]))
    }

    fn brute_force(&self, _n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let keys = probe::floats(inputs, "key")?;
        Ok(map([("pred", Tensor::chain(&argsort(keys)))]))
    }
}
