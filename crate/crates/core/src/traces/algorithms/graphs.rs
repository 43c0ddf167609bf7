//! Breadth-first search, Bellman-Ford and Floyd-Warshall over dense graphs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use super::Algorithm;
use crate::error::{Error, Result};
use crate::traces::probe::{self, map, mask_tensor};
use crate::traces::sampling::{positions, random_graph, random_weights};
use crate::traces::spec::{FeatureSpec, FeatureType::*, Location::*, Schema, Stage::*};
use crate::traces::{FeatureMap, Recorder, Tensor};

/// Largest size at which shortest-path oracles enumerate every simple path;
/// beyond it they fall back to Dijkstra.
const PATH_ENUMERATION_MAX: usize = 8;

fn bools(v: &[f32]) -> Vec<bool> {
    v.iter().map(|&x| x > 0.0).collect()
}

fn mask_floats(m: &[bool]) -> Vec<f32> {
    m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn edge_mask(m: &FeatureMap, name: &str) -> Result<Vec<bool>> {
    Ok(bools(probe::floats(m, name)?))
}

/// Single-source shortest distances and predecessors, computed by summing
/// edge weights along each path from the source (`f32`, left to right).
/// Unreachable nodes keep `None` and point at themselves.
pub(crate) fn shortest_paths(n: usize, w: &[f32], adj: &[bool], src: usize) -> (Vec<Option<f32>>, Vec<usize>) {
    if n <= PATH_ENUMERATION_MAX {
        enumerate_paths(n, w, adj, src)
    } else {
        dijkstra(n, w, adj, src)
    }
}

fn enumerate_paths(n: usize, w: &[f32], adj: &[bool], src: usize) -> (Vec<Option<f32>>, Vec<usize>) {
    let mut best: Vec<Option<f32>> = vec![None; n];
    let mut pred: Vec<usize> = (0..n).collect();
    best[src] = Some(0.0);
    let mut on_path = vec![false; n];
    fn walk(
        u: usize,
        dist: f32,
        n: usize,
        w: &[f32],
        adj: &[bool],
        on_path: &mut [bool],
        best: &mut [Option<f32>],
        pred: &mut [usize],
    ) {
        on_path[u] = true;
        for v in 0..n {
            if adj[u * n + v] && !on_path[v] {
                let d = dist + w[u * n + v];
                if best[v].is_none_or(|b| d < b) {
                    best[v] = Some(d);
                    pred[v] = u;
                }
                walk(v, d, n, w, adj, on_path, best, pred);
            }
        }
        on_path[u] = false;
    }
    walk(src, 0.0, n, w, adj, &mut on_path, &mut best, &mut pred);
    (best, pred)
}

fn dijkstra(n: usize, w: &[f32], adj: &[bool], src: usize) -> (Vec<Option<f32>>, Vec<usize>) {
    let mut dist: Vec<Option<f32>> = vec![None; n];
    let mut pred: Vec<usize> = (0..n).collect();
    let mut done = vec![false; n];
    dist[src] = Some(0.0);
    loop {
        let u = (0..n)
            .filter(|&u| !done[u] && dist[u].is_some())
            .min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap());
        let Some(u) = u else { break };
        done[u] = true;
        let du = dist[u].unwrap();
        for v in 0..n {
            if adj[u * n + v] && !done[v] {
                let d = du + w[u * n + v];
                if dist[v].is_none_or(|b| d < b) {
                    dist[v] = Some(d);
                    pred[v] = u;
                }
            }
        }
    }
    (dist, pred)
}

/// Level-synchronous BFS from `s` on an undirected graph. A newly reached
/// node points at the smallest-index reached neighbour.
pub(crate) struct Bfs;

fn bfs_step(n: usize, a: &[bool], s: usize, reach: &[bool], pi: &[usize]) -> (Vec<bool>, Vec<usize>) {
    let mut next_reach = reach.to_vec();
    let mut next_pi = pi.to_vec();
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] && reach[i] {
                if next_pi[j] == j && j != s {
                    next_pi[j] = i;
                }
                next_reach[j] = true;
            }
        }
    }
    (next_reach, next_pi)
}

fn bfs_hint(reach: &[bool], pi: &[usize]) -> FeatureMap {
    map([("reach_h", mask_tensor(reach)), ("pi_h", Tensor::pointers(pi))])
}

impl Algorithm for Bfs {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("s", Input, Node, MaskOne),
            FeatureSpec::new("A", Input, Edge, Mask),
            FeatureSpec::new("reach_h", Hint, Node, Mask),
            FeatureSpec::new("pi_h", Hint, Node, Pointer),
            FeatureSpec::new("pi", Output, Node, Pointer),
        ])
        .expect("valid schema")
    }

    fn min_nodes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let adj = random_graph(n, false, rng);
        let s = rng.gen_range(0..n);
        map([
            ("pos", Tensor::Float(positions(n))),
            ("s", Tensor::one_hot(s, n)),
            ("A", Tensor::Float(mask_floats(&adj))),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let a = edge_mask(inputs, "A")?;
        let s = probe::hot(inputs, "s")?;
        let mut reach = vec![false; n];
        let mut pi: Vec<usize> = (0..n).collect();
        reach[s] = true;
        loop {
            let prev_reach = reach.clone();
            rec.push(bfs_hint(&prev_reach, &pi))?;
            for i in 0..n {
                for j in 0..n {
                    if a[i * n + j] && prev_reach[i] {
                        if pi[j] == j && j != s {
                            pi[j] = i;
                        }
                        reach[j] = true;
                    }
                }
            }
            if reach == prev_reach {
                break;
            }
        }
        Ok(map([("pi", Tensor::pointers(&pi))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let a = edge_mask(inputs, "A")?;
        let s = probe::hot(inputs, "s")?;
        let reach = probe::mask(hint, "reach_h")?;
        let pi = probe::pointers(hint, "pi_h")?;
        let (next_reach, next_pi) = bfs_step(n, &a, s, &reach, &pi);
        if next_reach == reach {
            return Ok(hint.clone());
        }
        Ok(bfs_hint(&next_reach, &next_pi))
    }

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let a = edge_mask(inputs, "A")?;
        let s = probe::hot(inputs, "s")?;
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if a[u * n + v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let pi: Vec<usize> = (0..n)
            .map(|j| {
                if j == s || dist[j] == usize::MAX {
                    return j;
                }
                (0..n)
                    .find(|&i| a[i * n + j] && dist[i] != usize::MAX && dist[i] + 1 == dist[j])
                    .unwrap_or(j)
            })
            .collect();
        Ok(map([("pi", Tensor::pointers(&pi))]))
    }
}

/// Synchronous Bellman-Ford from `s` on a weighted digraph.
pub(crate) struct BellmanFord;

fn bf_hint(pi: &[usize], d: &[f32], msk: &[bool]) -> FeatureMap {
    map([
        ("pi_h", Tensor::pointers(pi)),
        ("d", Tensor::Float(d.to_vec())),
        ("msk", mask_tensor(msk)),
    ])
}

fn weighted_graph(n: usize, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f32>) {
    let adj = random_graph(n, true, rng);
    let w = random_weights(&adj, rng);
    (adj, w)
}

impl Algorithm for BellmanFord {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("s", Input, Node, MaskOne),
            FeatureSpec::new("A", Input, Edge, Scalar),
            FeatureSpec::new("adj", Input, Edge, Mask),
            FeatureSpec::new("pi_h", Hint, Node, Pointer),
            FeatureSpec::new("d", Hint, Node, Scalar),
            FeatureSpec::new("msk", Hint, Node, Mask),
            FeatureSpec::new("pi", Output, Node, Pointer),
        ])
        .expect("valid schema")
    }

    fn min_nodes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let (adj, w) = weighted_graph(n, rng);
        let s = rng.gen_range(0..n);
        map([
            ("pos", Tensor::Float(positions(n))),
            ("s", Tensor::one_hot(s, n)),
            ("A", Tensor::Float(w)),
            ("adj", Tensor::Float(mask_floats(&adj))),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let w = probe::floats(inputs, "A")?;
        let adj = edge_mask(inputs, "adj")?;
        let s = probe::hot(inputs, "s")?;
        let mut d = vec![0.0f32; n];
        let mut pi: Vec<usize> = (0..n).collect();
        let mut msk = vec![false; n];
        msk[s] = true;
        loop {
            let prev_d = d.clone();
            let prev_msk = msk.clone();
            rec.push(bf_hint(&pi, &prev_d, &prev_msk))?;
            for u in 0..n {
                for v in 0..n {
                    if prev_msk[u] && adj[u * n + v] {
                        let cand = prev_d[u] + w[u * n + v];
                        if !msk[v] || cand < d[v] {
                            d[v] = cand;
                            pi[v] = u;
                        }
                        msk[v] = true;
                    }
                }
            }
            if d == prev_d {
                break;
            }
        }
        Ok(map([("pi", Tensor::pointers(&pi))]))
    }

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let w = probe::floats(inputs, "A")?;
        let adj = edge_mask(inputs, "adj")?;
        let pi = probe::pointers(hint, "pi_h")?;
        let d = probe::floats(hint, "d")?;
        let msk = probe::mask(hint, "msk")?;
        let mut next_d = d.to_vec();
        let mut next_pi = pi.clone();
        let mut next_msk = msk.clone();
        for u in (0..n).filter(|&u| msk[u]) {
            for v in (0..n).filter(|&v| adj[u * n + v]) {
                let cand = d[u] + w[u * n + v];
                if !next_msk[v] || cand < next_d[v] {
                    next_d[v] = cand;
                    next_pi[v] = u;
                }
                next_msk[v] = true;
            }
        }
        if next_d == d {
            return Ok(hint.clone());
        }
        Ok(bf_hint(&next_pi, &next_d, &next_msk))
    }

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let w = probe::floats(inputs, "A")?;
        let adj = edge_mask(inputs, "adj")?;
        let s = probe::hot(inputs, "s")?;
        let (_, pred) = shortest_paths(n, w, &adj, s);
        Ok(map([("pi", Tensor::pointers(&pred))]))
    }
}

/// All-pairs shortest paths. Each hint is the state after relaxing through
/// pivot `k` (the first hint has pivot 0 already applied); `Pi_h[i][j]` is
/// the predecessor of `j` on the current best path from `i`.
pub(crate) struct FloydWarshall;

struct FwState {
    pi: Vec<usize>,
    d: Vec<f32>,
    msk: Vec<bool>,
}

impl FwState {
    #[cfg(test)]
    fn initial(n: usize, w: &[f32], adj: &[bool]) -> Self {
        let mut msk = adj.to_vec();
        let mut d = w.to_vec();
        for i in 0..n {
            msk[i * n + i] = true;
            d[i * n + i] = 0.0;
        }
        let pi = (0..n * n).map(|e| e / n).collect();
        Self { pi, d, msk }
    }

    /// Relaxation through pivot `k`, reading only the pre-round state.
    fn relax(&self, n: usize, k: usize) -> Self {
        let mut next = Self {
            pi: self.pi.clone(),
            d: self.d.clone(),
            msk: self.msk.clone(),
        };
        for i in 0..n {
            for j in 0..n {
                if self.msk[i * n + k] && self.msk[k * n + j] {
                    let cand = self.d[i * n + k] + self.d[k * n + j];
                    if !next.msk[i * n + j] || cand < next.d[i * n + j] {
                        next.d[i * n + j] = cand;
                        next.pi[i * n + j] = self.pi[k * n + j];
                    }
                    next.msk[i * n + j] = true;
                }
            }
        }
        next
    }

    fn hint(&self, n: usize, k: usize) -> FeatureMap {
        map([
            ("Pi_h", Tensor::pointers(&self.pi)),
            ("D", Tensor::Float(self.d.clone())),
            ("msk", mask_tensor(&self.msk)),
            ("k", Tensor::one_hot(k, n)),
        ])
    }
}

impl Algorithm for FloydWarshall {
    fn schema(&self) -> Schema {
        Schema::new(vec![
            FeatureSpec::new("pos", Input, Node, Scalar),
            FeatureSpec::new("A", Input, Edge, Scalar),
            FeatureSpec::new("adj", Input, Edge, Mask),
            FeatureSpec::new("Pi_h", Hint, Edge, Pointer),
            FeatureSpec::new("D", Hint, Edge, Scalar),
            FeatureSpec::new("msk", Hint, Edge, Mask),
            FeatureSpec::new("k", Hint, Node, MaskOne),
            FeatureSpec::new("Pi", Output, Edge, Pointer),
        ])
        .expect("valid schema")
    }

    fn min_nodes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let (adj, w) = weighted_graph(n, rng);
        map([
            ("pos", Tensor::Float(positions(n))),
            ("A", Tensor::Float(w)),
            ("adj", Tensor::Float(mask_floats(&adj))),
        ])
    }

    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap> {
        let w = probe::floats(inputs, "A")?;
        let adj = edge_mask(inputs, "adj")?;
        let mut d = w.to_vec();
        let mut msk = adj.clone();
        let mut pi: Vec<usize> = (0..n * n).map(|e| e / n).collect();
        for i in 0..n {
            d[i * n + i] = 0.0;
            msk[i * n + i] = true;
        }
        for k in 0..n {
            let prev_d = d.clone();
            let prev_msk = msk.clone();
            for i in 0..n {
                for j in 0..n {
                    if prev_msk[i * n + k] && prev_msk[k * n + j] {
                        let cand = prev_d[i * n + k] + prev_d[k * n + j];
                        if !msk[i * n + j] || cand < d[i * n + j] {
                            d[i * n + j] = cand;
                            pi[i * n + j] = pi[k * n + j];
                        }
                        msk[i * n + j] = true;
                    }
                }
            }
            rec.push(map([
                ("Pi_h", Tensor::pointers(&pi)),
                ("D", Tensor::Float(d.clone())),
                ("msk", mask_tensor(&msk)),
                ("k", Tensor::one_hot(k, n)),
            ]))?;
        }
        Ok(map([("Pi", Tensor::pointers(&pi))]))
    }

    fn step(&self, n: usize, _inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap> {
        let state = FwState {
            pi: probe::edge_pointers(hint, "Pi_h", n)?,
            d: probe::floats(hint, "D")?.to_vec(),
            msk: probe::mask(hint, "msk")?,
        };
        if state.d.len() != n * n {
            return Err(Error::InvalidHintState("D has wrong size".into()));
        }
        let k = probe::hot(hint, "k")?;
        if k + 1 >= n {
            return Ok(hint.clone());
        }
        Ok(state.relax(n, k + 1).hint(n, k + 1))
    }

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap> {
        let w = probe::floats(inputs, "A")?;
        let adj = edge_mask(inputs, "adj")?;
        let mut pi = vec![0usize; n * n];
        for i in 0..n {
            let (dist, pred) = shortest_paths(n, w, &adj, i);
            for j in 0..n {
                pi[i * n + j] = if j == i || dist[j].is_none() { i } else { pred[j] };
            }
        }
        Ok(map([("Pi", Tensor::pointers(&pi))]))
    }
}

/// Initial Floyd-Warshall state before any pivot, exposed for tests.
#[cfg(test)]
pub(crate) fn fw_relax_from_inputs(n: usize, w: &[f32], adj: &[bool], k: usize) -> Vec<f32> {
    FwState::initial(n, w, adj).relax(n, k).d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::*;

    fn graph_instance(alg: AlgorithmId, n: usize, edges: &[(usize, usize, f32)], s: usize) -> ProblemInstance {
        let mut w = vec![0.0f32; n * n];
        let mut adj = vec![0.0f32; n * n];
        for &(u, v, x) in edges {
            w[u * n + v] = x;
            adj[u * n + v] = 1.0;
        }
        let mut inputs: FeatureMap = [
            ("pos".to_string(), Tensor::Float(sampling::positions(n))),
            ("A".to_string(), Tensor::Float(w)),
        ]
        .into_iter()
        .collect();
        if alg == AlgorithmId::BellmanFord {
            inputs.insert("adj".into(), Tensor::Float(adj));
            inputs.insert("s".into(), Tensor::one_hot(s, n));
        } else if alg == AlgorithmId::FloydWarshall {
            inputs.insert("adj".into(), Tensor::Float(adj));
        }
        ProblemInstance::new(alg, n, inputs).unwrap()
    }

    #[test]
    fn bellman_ford_four_nodes() {
        // 0->1 (0.5), 1->2 (0.25), 0->2 (0.9), 2->3 (0.5), 1->3 (0.9)
        let edges = [(0, 1, 0.5), (1, 2, 0.25), (0, 2, 0.9), (2, 3, 0.5), (1, 3, 0.9)];
        let inst = graph_instance(AlgorithmId::BellmanFord, 4, &edges, 0);
        let t = run_algorithm(&inst).unwrap();
        let d = t.hints.last().unwrap()["d"].as_floats().unwrap().to_vec();
        assert_eq!(d, vec![0.0, 0.5, 0.75, 1.25]);
        assert_eq!(t.outputs["pi"], Tensor::Index(vec![0, 0, 1, 2]));
        assert_eq!(brute_force_output(&inst).unwrap(), t.outputs);
    }

    #[test]
    fn enumeration_and_dijkstra_agree() {
        for seed in 0..30 {
            let inst = sample_instance(AlgorithmId::BellmanFord, 7, seed).unwrap();
            let w = inst.inputs["A"].as_floats().unwrap();
            let adj = bools(inst.inputs["adj"].as_floats().unwrap());
            for s in 0..7 {
                assert_eq!(enumerate_paths(7, w, &adj, s), dijkstra(7, w, &adj, s));
            }
        }
    }

    #[test]
    fn bfs_step_is_one_hop_dilation() {
        for seed in 0..20 {
            let inst = sample_instance(AlgorithmId::Bfs, 8, seed).unwrap();
            let a = bools(inst.inputs["A"].as_floats().unwrap());
            let t = run_algorithm(&inst).unwrap();
            for hint in &t.hints {
                let reach = probe::mask(hint, "reach_h").unwrap();
                let next = step_oracle(&inst, hint).unwrap();
                let next_reach = probe::mask(&next, "reach_h").unwrap();
                let frontier: std::collections::BTreeSet<usize> = (0..8)
                    .filter(|&j| reach[j] || (0..8).any(|i| reach[i] && a[i * 8 + j]))
                    .collect();
                let got: std::collections::BTreeSet<usize> =
                    (0..8).filter(|&j| next_reach[j]).collect();
                assert_eq!(got, frontier);
            }
        }
    }

    #[test]
    fn floyd_warshall_pivot_advances() {
        for seed in 0..10 {
            let n = 6;
            let inst = sample_instance(AlgorithmId::FloydWarshall, n, seed).unwrap();
            let t = run_algorithm(&inst).unwrap();
            assert_eq!(t.len(), n);
            for (k, w) in t.hints.windows(2).enumerate() {
                let next = step_oracle(&inst, &w[0]).unwrap();
                assert_eq!(next["k"], Tensor::one_hot(k + 1, n));
                let d = w[0]["D"].as_floats().unwrap();
                let nd = next["D"].as_floats().unwrap();
                let msk = probe::mask(&w[0], "msk").unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let kk = k + 1;
                        let expect = if msk[i * n + kk] && msk[kk * n + j] {
                            let via = d[i * n + kk] + d[kk * n + j];
                            if !msk[i * n + j] || via < d[i * n + j] { via } else { d[i * n + j] }
                        } else {
                            d[i * n + j]
                        };
                        assert_eq!(nd[i * n + j], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn floyd_warshall_first_hint_relaxes_pivot_zero() {
        let inst = sample_instance(AlgorithmId::FloydWarshall, 5, 3).unwrap();
        let w = inst.inputs["A"].as_floats().unwrap();
        let adj = bools(inst.inputs["adj"].as_floats().unwrap());
        let t = run_algorithm(&inst).unwrap();
        assert_eq!(
            t.hints[0]["D"].as_floats().unwrap(),
            fw_relax_from_inputs(5, w, &adj, 0).as_slice()
        );
    }
}
