use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::traces::{run_algorithm, sample_instance, Tensor};

fn tiny(mode: HistoryMode, triplets: bool, seed: u64) -> ModelConfig {
    ModelConfig { hidden_dim: 6, gate_hidden_dim: 5, history_mode: mode, use_triplets: triplets, lambda: 0.0, seed }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn p<'a>(m: &'a Model, name: &str) -> &'a Array2<f64> {
    m.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

fn vecmat(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols()).map(|f| x.iter().enumerate().map(|(c, v)| v * w[[c, f]]).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn row(a: &Array2<f64>, r: usize) -> Vec<f64> {
    a.row(r).to_vec()
}

/// Straight loop implementation of the processor core.
fn gnn_oracle(m: &Model, z: &Array2<f64>, e: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let h = m.hidden_dim();
    let pr = |s: &str| p(m, &format!("processor/{s}"));
    let gv = row(g, 0);
    let mut agg = vec![vec![f64::NEG_INFINITY; h]; n];
    for i in 0..n {
        for j in 0..n {
            let eij = row(e, i * n + j);
            let mut pre = add(&vecmat(&row(z, i), pr("w_dst")), &vecmat(&row(z, j), pr("w_src")));
            pre = add(&pre, &vecmat(&eij, pr("w_e")));
            pre = add(&pre, &vecmat(&gv, pr("w_g")));
            pre = add(&pre, &row(pr("b_m1"), 0));
            if m.config.use_triplets {
                let mut t = add(&vecmat(&row(z, i), pr("t_i")), &vecmat(&row(z, j), pr("t_j")));
                t = add(&t, &vecmat(&eij, pr("t_e1")));
                t = add(&t, &vecmat(&gv, pr("t_g")));
                t = add(&t, &row(pr("b_t"), 0));
                let mut best = vec![f64::NEG_INFINITY; TRIPLET_DIM];
                for k in 0..n {
                    let c = add(&vecmat(&row(z, k), pr("t_k")), &vecmat(&row(e, i * n + k), pr("t_e2")));
                    let c = add(&c, &vecmat(&row(e, k * n + j), pr("t_e3")));
                    for d in 0..TRIPLET_DIM {
                        best[d] = best[d].max(c[d]);
                    }
                }
                let t = add(&t, &best);
                let tri: Vec<f64> = add(&vecmat(&t, pr("w_t")), &row(pr("b_to"), 0)).iter().map(|x| x.max(0.0)).collect();
                pre = add(&pre, &tri);
            }
            let act: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
            let msg = add(&vecmat(&act, pr("w_m2")), &row(pr("b_m2"), 0));
            for f in 0..h {
                agg[i][f] = agg[i][f].max(msg[f]);
            }
        }
    }
    let mut out = Array2::zeros((n, h));
    for i in 0..n {
        let o = add(&vecmat(&row(z, i), pr("w_o1")), &vecmat(&agg[i], pr("w_o2")));
        let o: Vec<f64> = add(&o, &row(pr("b_o"), 0)).iter().map(|x| x.max(0.0)).collect();
        let mean = o.iter().sum::<f64>() / h as f64;
        let var = o.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h as f64;
        for f in 0..h {
            out[[i, f]] = (o[f] - mean) / (var + 1e-5).sqrt() * pr("ln_gamma")[[0, f]] + pr("ln_beta")[[0, f]];
        }
    }
    out
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn step_features(traj: &Trajectory, t: usize) -> FeatureMap {
    let mut f = traj.instance.inputs.clone();
    f.extend(traj.hints[t].clone());
    f
}

#[test]
fn config_invariants() {
    let mut c = tiny(HistoryMode::Baseline, true, 0);
    c.lambda = 0.1;
    assert!(c.validate().is_err());
    c.history_mode = HistoryMode::Gated;
    assert!(c.validate().is_ok());
    c.hidden_dim = 0;
    assert!(c.validate().is_err());
}

#[test]
fn parameter_layout_is_deterministic_and_mode_independent() {
    let algos = [AlgorithmId::Minimum, AlgorithmId::FloydWarshall];
    let a = Model::new(tiny(HistoryMode::Baseline, true, 4), &algos).unwrap();
    let b = Model::new(tiny(HistoryMode::Gated, true, 4), &algos).unwrap();
    for (name, v) in a.params.iter() {
        assert_eq!(b.params.by_name(name), Some(v), "{name}");
    }
    assert_eq!(b.params.len(), a.params.len() + 4);
    assert_eq!(p(&b, "gate/b2"), &Array2::from_elem((1, 6), GATE_BIAS_INIT));
}

#[test]
fn encode_zero_features_is_zero() {
    let m = Model::new(tiny(HistoryMode::Baseline, true, 1), &[AlgorithmId::BinarySearch]).unwrap();
    let n = 3;
    let mut f = FeatureMap::new();
    for spec in AlgorithmId::BinarySearch.schema().specs() {
        if spec.stage != Stage::Output {
            f.insert(spec.name.clone(), Tensor::Float(vec![0.0; spec.len(n)]));
        }
    }
    let e = m.encode(AlgorithmId::BinarySearch, &f, n).unwrap();
    assert!(e.node_emb.iter().chain(&e.edge_emb).chain(&e.graph_emb).all(|&x| x == 0.0));
}

#[test]
fn encode_is_affine_in_each_feature() {
    let algo = AlgorithmId::InsertionSort;
    let m = Model::new(tiny(HistoryMode::Baseline, true, 2), &[algo]).unwrap();
    let traj = run_algorithm(&sample_instance(algo, 5, 9).unwrap()).unwrap();
    let base = step_features(&traj, 0);
    let with_key = |scale: f32| {
        let mut f = base.clone();
        let k: Vec<f32> = base["key"].as_floats().unwrap().iter().map(|x| x * scale).collect();
        f.insert("key".into(), Tensor::Float(k));
        m.encode(algo, &f, 5).unwrap().node_emb
    };
    let (e0, e1, e2) = (with_key(0.0), with_key(1.0), with_key(2.0));
    assert!(max_diff(&(&e2 - &e0), &((&e1 - &e0) * 2.0)) < 1e-12);
}

#[test]
fn encode_matches_dense_recomputation() {
    let algo = AlgorithmId::InsertionSort;
    let m = Model::new(tiny(HistoryMode::Baseline, true, 3), &[algo]).unwrap();
    let n = 4;
    let traj = run_algorithm(&sample_instance(algo, n, 3).unwrap()).unwrap();
    let f = step_features(&traj, 1);
    let e = m.encode(algo, &f, n).unwrap();
    let h = m.hidden_dim();
    let mut node = Array2::<f64>::zeros((n, h));
    for (stage, name) in [("input", "pos"), ("input", "key"), ("hint", "i"), ("hint", "j")] {
        let w = p(&m, &format!("insertion_sort/encode/{stage}/{name}/w"));
        let b = p(&m, &format!("insertion_sort/encode/{stage}/{name}/b"));
        let x = f[name].as_floats().unwrap();
        for i in 0..n {
            for c in 0..h {
                node[[i, c]] += x[i] as f64 * w[[0, c]] + b[[0, c]];
            }
        }
    }
    assert!(max_diff(&node, &e.node_emb) < 1e-12);
    let w = p(&m, "insertion_sort/encode/hint/pred_h/w");
    let b = p(&m, "insertion_sort/encode/hint/pred_h/b");
    let ptr = f["pred_h"].as_indices().unwrap();
    let mut edge = Array2::<f64>::zeros((n * n, h));
    for i in 0..n {
        for j in 0..n {
            let x = if ptr[i] as usize == j { 1.0 } else { 0.0 };
            for c in 0..h {
                edge[[i * n + j, c]] = x * w[[0, c]] + b[[0, c]];
            }
        }
    }
    assert!(max_diff(&edge, &e.edge_emb) < 1e-12);
    assert!(e.graph_emb.iter().all(|&x| x == 0.0));
}

#[test]
fn missing_feature_is_schema_mismatch() {
    let algo = AlgorithmId::Minimum;
    let m = Model::new(tiny(HistoryMode::Baseline, true, 3), &[algo]).unwrap();
    let traj = run_algorithm(&sample_instance(algo, 3, 0).unwrap()).unwrap();
    let mut f = step_features(&traj, 0);
    f.remove("key");
    assert!(matches!(m.encode(algo, &f, 3), Err(Error::SchemaMismatch(_))));
    let mut f = step_features(&traj, 0);
    f.insert("key".into(), Tensor::Float(vec![f32::NAN, 0.0, 0.0]));
    assert!(matches!(m.encode(algo, &f, 3), Err(Error::NumericalError(_))));
}

#[test]
fn gnn_core_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for triplets in [false, true] {
        let m = Model::new(tiny(HistoryMode::Baseline, triplets, 5), &[AlgorithmId::Minimum]).unwrap();
        for n in [1, 3] {
            let z = random(n, 12, &mut rng);
            let e = random(n * n, 6, &mut rng);
            let g = random(1, 6, &mut rng);
            let got = m.gnn_core(&z, &e, &g).unwrap().h;
            assert!(max_diff(&got, &gnn_oracle(&m, &z, &e, &g)) < 1e-12, "triplets={triplets} n={n}");
        }
    }
}

#[test]
fn gnn_core_hand_computed_line_graph() {
    // hidden 2, no triplets; weights chosen so every stage is easy to follow
    let cfg = ModelConfig { hidden_dim: 2, gate_hidden_dim: 2, use_triplets: false, ..Default::default() };
    let mut m = Model::new(cfg, &[AlgorithmId::Minimum]).unwrap();
    let set = |m: &mut Model, name: &str, v: Vec<f64>| {
        let id = m.params.id(&format!("processor/{name}")).unwrap();
        let shape = m.params.get(id).dim();
        *m.params.get_mut(id) = Array2::from_shape_vec(shape, v).unwrap();
    };
    // message pre-activation = z_j[0] (sender's first feature) + e_ij[0]
    set(&mut m, "w_dst", vec![0.0; 8]);
    set(&mut m, "w_src", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    set(&mut m, "w_e", vec![1.0, 0.0, 0.0, 0.0]);
    set(&mut m, "w_g", vec![0.0; 4]);
    set(&mut m, "w_m2", vec![1.0, 0.0, 0.0, 0.0]);
    // readout = [z_i[0], agg_i[0]]
    set(&mut m, "w_o1", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    set(&mut m, "w_o2", vec![0.0, 1.0, 0.0, 0.0]);
    // line graph 0 - 1 - 2: edge bonus 1 on existing edges, -5 elsewhere
    let z = Array2::from_shape_vec((3, 4), vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
    let mut e = Array2::from_elem((9, 2), 0.0);
    for i in 0..3usize {
        for j in 0..3usize {
            e[[i * 3 + j, 0]] = if i.abs_diff(j) == 1 { 1.0 } else { -5.0 };
        }
    }
    let g = Array2::zeros((1, 2));
    // node 0: senders give relu(1-5)=0, relu(2+1)=3, relu(3-5)=0 -> agg 3
    // node 1: relu(1+1)=2, relu(2-5)=0, relu(3+1)=4 -> agg 4
    // node 2: relu(1-5)=0, relu(2+1)=3, relu(3-5)=0 -> agg 3
    // pre-norm rows [1,3], [2,4], [3,3]; layer norm of [a,b] is [-1,1]·sign(b-a)
    let h = m.gnn_core(&z, &e, &g).unwrap().h;
    let s = 1.0 / (1.0 + 1e-5f64).sqrt();
    let expect = Array2::from_shape_vec((3, 2), vec![-s, s, -s, s, 0.0, 0.0]).unwrap();
    assert!(max_diff(&h, &expect) < 1e-12, "{h}");
}

#[test]
fn gnn_core_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = Model::new(tiny(HistoryMode::Baseline, true, 6), &[AlgorithmId::Minimum]).unwrap();
    for _ in 0..5 {
        let n = 5;
        let z = random(n, 12, &mut rng);
        let e = random(n * n, 6, &mut rng);
        let g = random(1, 6, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // node i of the permuted graph is node perm[i] of the original
        let zp = Array2::from_shape_fn((n, 12), |(i, c)| z[[perm[i], c]]);
        let ep = Array2::from_shape_fn((n * n, 6), |(r, c)| e[[perm[r / n] * n + perm[r % n], c]]);
        let h = m.gnn_core(&z, &e, &g).unwrap().h;
        let hp = m.gnn_core(&zp, &ep, &g).unwrap().h;
        let back = Array2::from_shape_fn((n, 6), |(i, c)| h[[perm[i], c]]);
        assert!(max_diff(&hp, &back) < 1e-5);
    }
}

fn encoded(m: &Model, algo: AlgorithmId, n: usize, seed: u64) -> EncodedStep {
    let traj = run_algorithm(&sample_instance(algo, n, seed).unwrap()).unwrap();
    m.encode(algo, &step_features(&traj, 0), n).unwrap()
}

#[test]
fn forget_step_ignores_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = Model::new(tiny(HistoryMode::Forget, true, 7), &[AlgorithmId::Bfs]).unwrap();
    let enc = encoded(&m, AlgorithmId::Bfs, 5, 1);
    let zero = LatentState { h: Array2::zeros((5, 6)) };
    let noisy = LatentState { h: random(5, 6, &mut rng) * 100.0 };
    let a = m.processor_step(&enc, &zero, HistoryMode::Forget, GateOverride::Learned).unwrap();
    let b = m.processor_step(&enc, &noisy, HistoryMode::Forget, GateOverride::Learned).unwrap();
    assert_eq!(a.h_next, b.h_next);
    assert!(b.gate_values.is_none());
    assert!(b.z.columns().into_iter().skip(6).all(|c| c.iter().all(|&x| x == 0.0)));
}

#[test]
fn gate_reductions_at_step_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut m = Model::new(tiny(HistoryMode::Gated, true, 8), &[AlgorithmId::Bfs]).unwrap();
    let enc = encoded(&m, AlgorithmId::Bfs, 4, 2);
    let h = LatentState { h: random(4, 6, &mut rng) };
    let gated = m.processor_step(&enc, &h, HistoryMode::Gated, GateOverride::Learned).unwrap();
    let gates = gated.gate_values.as_ref().unwrap();
    assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
    let open = m.processor_step(&enc, &h, HistoryMode::Gated, GateOverride::Open).unwrap();
    let base = m.processor_step(&enc, &h, HistoryMode::Baseline, GateOverride::Learned).unwrap();
    assert_eq!(open.h_next, base.h_next);
    let closed = m.processor_step(&enc, &h, HistoryMode::Gated, GateOverride::Closed).unwrap();
    let forget = m.processor_step(&enc, &h, HistoryMode::Forget, GateOverride::Learned).unwrap();
    assert_eq!(closed.h_next, forget.h_next);
    // a saturated learned gate behaves like the closed one
    let b2 = m.params.id("gate/b2").unwrap();
    m.params.get_mut(b2).fill(-1e9);
    let sat = m.processor_step(&enc, &h, HistoryMode::Gated, GateOverride::Learned).unwrap();
    assert_eq!(sat.h_next, forget.h_next);
}

#[test]
fn decode_zero_weights_gives_zero() {
    let algo = AlgorithmId::FloydWarshall;
    let mut m = Model::new(tiny(HistoryMode::Baseline, true, 9), &[algo]).unwrap();
    for id in m.task_param_ids(algo).unwrap() {
        if m.params.name(id).contains("/decode/") {
            m.params.get_mut(id).fill(0.0);
        }
    }
    let enc = encoded(&m, algo, 4, 0);
    let preds = m.decode(algo, &LatentState { h: Array2::zeros((4, 6)) }, &enc).unwrap();
    assert_eq!(preds.len(), 5);
    assert!(preds.values().all(|v| v.iter().all(|&x| x == 0.0)));
}

#[test]
fn prediction_shapes() {
    let algo = AlgorithmId::InsertionSort;
    let m = Model::new(tiny(HistoryMode::Baseline, true, 9), &[algo]).unwrap();
    let enc = encoded(&m, algo, 5, 0);
    let preds = m.decode(algo, &LatentState { h: Array2::zeros((5, 6)) }, &enc).unwrap();
    assert_eq!(preds["pred_h"].dim(), (5, 5));
    assert_eq!(preds["pred"].dim(), (5, 5));
    assert_eq!(preds["i"].dim(), (5, 1));
    let m = Model::new(tiny(HistoryMode::Baseline, true, 9), &[AlgorithmId::FloydWarshall]).unwrap();
    let enc = encoded(&m, AlgorithmId::FloydWarshall, 3, 0);
    let preds = m.decode(AlgorithmId::FloydWarshall, &LatentState { h: Array2::zeros((3, 6)) }, &enc).unwrap();
    assert_eq!(preds["Pi"].dim(), (9, 3));
    assert_eq!(preds["D"].dim(), (9, 1));
    let m = Model::new(tiny(HistoryMode::Baseline, true, 9), &[AlgorithmId::BinarySearch]).unwrap();
    let enc = encoded(&m, AlgorithmId::BinarySearch, 3, 0);
    let preds = m.decode(AlgorithmId::BinarySearch, &LatentState { h: Array2::zeros((3, 6)) }, &enc).unwrap();
    assert_eq!(preds["phase"].dim(), (1, 3));
}

#[test]
fn single_hint_trajectory_is_mode_independent() {
    let algo = AlgorithmId::Minimum;
    let traj = run_algorithm(&sample_instance(algo, 1, 0).unwrap()).unwrap();
    assert_eq!(traj.len(), 1);
    let outs: Vec<_> = HistoryMode::ALL
        .iter()
        .map(|&mode| {
            let m = Model::new(tiny(mode, true, 10), &[algo]).unwrap();
            let r = m.forward_trajectory(&traj, &ForwardOptions::default()).unwrap();
            assert_eq!(r.records.len(), 1);
            assert!(r.hint_predictions.is_empty());
            assert!(r.records[0].carried.iter().all(|&x| x == 0.0));
            r.output_predictions
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn forget_forward_ignores_carry_injection() {
    let algo = AlgorithmId::BubbleSort;
    let m = Model::new(tiny(HistoryMode::Forget, true, 15), &[algo]).unwrap();
    let traj = run_algorithm(&sample_instance(algo, 5, 4).unwrap()).unwrap();
    let plain = m.forward_trajectory(&traj, &ForwardOptions::default()).unwrap();
    let hook = |t: usize, h: &mut Array2<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        h.mapv_inplace(|_| rng.gen_range(-50.0..50.0));
    };
    let opts = ForwardOptions { carry: Some(&hook), ..Default::default() };
    let noisy = m.forward_trajectory(&traj, &opts).unwrap();
    assert_eq!(plain.hint_predictions, noisy.hint_predictions);
    assert_eq!(plain.output_predictions, noisy.output_predictions);
    // the same injection does change a baseline model
    let b = Model::new(tiny(HistoryMode::Baseline, true, 15), &[algo]).unwrap();
    let x = b.forward_trajectory(&traj, &ForwardOptions::default()).unwrap();
    let y = b.forward_trajectory(&traj, &opts).unwrap();
    assert_ne!(x.output_predictions, y.output_predictions);
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Unrolled forward pass for `minimum` written out in loops.
fn minimum_oracle(m: &Model, traj: &Trajectory) -> (Vec<[Vec<f64>; 3]>, Vec<f64>) {
    let n = traj.n();
    let h = m.hidden_dim();
    let enc = |name: &str, stage: &str| {
        (p(m, &format!("minimum/encode/{stage}/{name}/w")).clone(), p(m, &format!("minimum/encode/{stage}/{name}/b")).clone())
    };
    let dec = |name: &str, stage: &str, w: &str| p(m, &format!("minimum/decode/{stage}/{name}/{w}")).clone();
    let f32s = |t: &Tensor| t.as_floats().unwrap().iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let pos = f32s(&traj.instance.inputs["pos"]);
    let key = f32s(&traj.instance.inputs["key"]);
    let mut ptr: Vec<f64> = vec![0.0; n * n];
    for (i, &j) in traj.hints[0]["pred_h"].as_indices().unwrap().iter().enumerate() {
        ptr[i * n + j as usize] = 1.0;
    }
    let mut min_h = f32s(&traj.hints[0]["min_h"]);
    let mut cur_i = f32s(&traj.hints[0]["i"]);
    let mut hid = Array2::<f64>::zeros((n, h));
    let steps = traj.len() - 1;
    let mut hints_out = Vec::new();
    let mut output = Vec::new();
    for t in 1..=steps {
        let mut node = Array2::<f64>::zeros((n, h));
        for (vals, name, stage) in [(&pos, "pos", "input"), (&key, "key", "input"), (&min_h, "min_h", "hint"), (&cur_i, "i", "hint")] {
            let (w, b) = enc(name, stage);
            for i in 0..n {
                for c in 0..h {
                    node[[i, c]] += vals[i] * w[[0, c]] + b[[0, c]];
                }
            }
        }
        let (w, b) = enc("pred_h", "hint");
        let edge = Array2::from_shape_fn((n * n, h), |(r, c)| ptr[r] * w[[0, c]] + b[[0, c]]);
        let graph = Array2::<f64>::zeros((1, h));
        let z = ndarray::concatenate(ndarray::Axis(1), &[node.view(), hid.view()]).unwrap();
        hid = gnn_oracle(m, &z, &edge, &graph);
        let u = ndarray::concatenate(ndarray::Axis(1), &[node.view(), hid.view()]).unwrap();
        let lin = |name: &str, stage: &str| -> Vec<f64> {
            let (w, b) = (dec(name, stage, "w"), dec(name, stage, "b"));
            (0..n).map(|i| vecmat(&row(&u, i), &w)[0] + b[[0, 0]]).collect()
        };
        let (w1, w2, w3, w4, b) = (dec("pred_h", "hint", "w1"), dec("pred_h", "hint", "w2"), dec("pred_h", "hint", "w3"), dec("pred_h", "hint", "w4"), dec("pred_h", "hint", "b"));
        let mut logits = vec![0.0; n * n];
        for i in 0..n {
            let p1 = vecmat(&row(&u, i), &w1);
            for j in 0..n {
                let p2 = add(&vecmat(&row(&u, j), &w2), &vecmat(&row(&edge, i * n + j), &w3));
                let mx: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a.max(*b)).collect();
                logits[i * n + j] = vecmat(&mx, &w4)[0] + b[[0, 0]];
            }
        }
        let min_logits = lin("min_h", "hint");
        let i_logits = lin("i", "hint");
        if t == steps {
            output = lin("min", "output");
        }
        for i in 0..n {
            let s = softmax(&logits[i * n..(i + 1) * n]);
            ptr[i * n..(i + 1) * n].copy_from_slice(&s);
        }
        min_h = softmax(&min_logits);
        cur_i = softmax(&i_logits);
        hints_out.push([logits, min_logits, i_logits]);
    }
    (hints_out, output)
}

#[test]
fn forward_matches_unrolled_loop_oracle() {
    let algo = AlgorithmId::Minimum;
    for seed in 0..3 {
        let m = Model::new(tiny(HistoryMode::Baseline, true, 20 + seed), &[algo]).unwrap();
        let traj = run_algorithm(&sample_instance(algo, 4, seed).unwrap()).unwrap();
        let got = m.forward_trajectory(&traj, &ForwardOptions::default()).unwrap();
        let (hints, output) = minimum_oracle(&m, &traj);
        assert_eq!(got.hint_predictions.len(), hints.len());
        for (g, [ptr, mn, it]) in got.hint_predictions.iter().zip(&hints) {
            let close = |a: &Array2<f64>, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10);
            assert!(close(&g["pred_h"], ptr));
            assert!(close(&g["min_h"], mn));
            assert!(close(&g["i"], it));
        }
        let out = &got.output_predictions["min"];
        assert!(out.iter().zip(&output).all(|(x, y)| (x - y).abs() < 1e-10));
    }
}

#[test]
fn forward_is_node_permutation_equivariant() {
    let algo = AlgorithmId::Bfs;
    let m = Model::new(tiny(HistoryMode::Gated, true, 30), &[algo]).unwrap();
    let traj = run_algorithm(&sample_instance(algo, 5, 6).unwrap()).unwrap();
    let n = 5;
    let perm = [3usize, 0, 4, 1, 2];
    let mut inv = [0usize; 5];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let permute_map = |m: &FeatureMap| -> FeatureMap {
        let schema = algo.schema();
        m.iter()
            .map(|(k, v)| {
                let spec = schema.specs().iter().find(|s| &s.name == k).unwrap();
                let t = match (spec.location, v) {
                    (Location::Node, Tensor::Float(x)) => Tensor::Float((0..n).map(|i| x[perm[i]]).collect()),
                    (Location::Node, Tensor::Index(x)) => {
                        Tensor::Index((0..n).map(|i| inv[x[perm[i]] as usize] as i32).collect())
                    }
                    (Location::Edge, Tensor::Float(x)) => {
                        Tensor::Float((0..n * n).map(|r| x[perm[r / n] * n + perm[r % n]]).collect())
                    }
                    _ => v.clone(),
                };
                (k.clone(), t)
            })
            .collect()
    };
    let mut pt = traj.clone();
    pt.instance.inputs = permute_map(&traj.instance.inputs);
    pt.hints = traj.hints.iter().map(permute_map).collect();
    pt.outputs = permute_map(&traj.outputs);
    let a = m.forward_trajectory(&traj, &ForwardOptions::default()).unwrap();
    let b = m.forward_trajectory(&pt, &ForwardOptions::default()).unwrap();
    for (x, y) in a.hint_predictions.iter().zip(&b.hint_predictions) {
        let reach_a = &x["reach_h"];
        let reach_b = &y["reach_h"];
        for i in 0..n {
            assert!((reach_b[[i, 0]] - reach_a[[perm[i], 0]]).abs() < 1e-9);
        }
        let (pa, pb) = (&x["pi_h"], &y["pi_h"]);
        for i in 0..n {
            for j in 0..n {
                assert!((pb[[i, j]] - pa[[perm[i], perm[j]]]).abs() < 1e-9);
            }
        }
    }
}
