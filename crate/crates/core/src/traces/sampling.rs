//! Input distributions: uniform keys on [0, 1), Erdős–Rényi graphs with
//! p = 0.5 over a forced Hamiltonian cycle (or path, when undirected), and
//! edge weights uniform on [0.2, 1).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EDGE_PROBABILITY: f64 = 0.5;
pub const MIN_WEIGHT: f32 = 0.2;
pub const MAX_WEIGHT: f32 = 1.0;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic generator keyed by (algorithm, n, seed).
pub fn rng_for(algorithm: &str, n: usize, seed: u64) -> ChaCha8Rng {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in algorithm.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
    }
    let key = splitmix(splitmix(h ^ splitmix(n as u64)) ^ seed);
    ChaCha8Rng::seed_from_u64(key)
}

/// `n` pairwise-distinct keys uniform on [0, 1).
pub fn distinct_keys(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    loop {
        let keys: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).all(|w| w[0] < w[1]) {
            return keys;
        }
    }
}

/// Dense row-major adjacency (no self loops). Directed graphs carry a random
/// Hamiltonian cycle so every node reaches every other; undirected graphs a
/// random Hamiltonian path.
pub fn random_graph(n: usize, directed: bool, rng: &mut impl Rng) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            if rng.gen_bool(EDGE_PROBABILITY) {
                adj[i * n + j] = true;
                if !directed {
                    adj[j * n + i] = true;
                }
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let links = if directed { n } else { n.saturating_sub(1) };
    for k in 0..links {
        let (a, b) = (perm[k], perm[(k + 1) % n]);
        if a == b {
            continue;
        }
        adj[a * n + b] = true;
        if !directed {
            adj[b * n + a] = true;
        }
    }
    adj
}

/// Weights uniform on [0.2, 1) on present edges, 0 elsewhere.
pub fn random_weights(adj: &[bool], rng: &mut impl Rng) -> Vec<f32> {
    adj.iter()
        .map(|&e| if e { rng.gen_range(MIN_WEIGHT..MAX_WEIGHT) } else { 0.0 })
        .collect()
}

pub fn positions(n: usize) -> Vec<f32> {
    (0..n).map(|i| i as f32 / n as f32).collect()
}
