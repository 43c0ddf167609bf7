use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ForwardOptions, HistoryMode, ModelConfig};
use crate::traces::{run_algorithm, sample_instance, AlgorithmId, FeatureSpec, FeatureType, Location, Tensor};

fn cfg(mode: HistoryMode, hidden: usize, seed: u64) -> ModelConfig {
    ModelConfig { hidden_dim: hidden, gate_hidden_dim: hidden, history_mode: mode, use_triplets: true, lambda: 0.0, seed }
}

fn traj(algo: AlgorithmId, n: usize, seed: u64) -> Trajectory {
    run_algorithm(&sample_instance(algo, n, seed).unwrap()).unwrap()
}

/// First trajectory of `algo` at `n` nodes with exactly `len` hints.
fn traj_with_len(algo: AlgorithmId, n: usize, len: usize) -> Trajectory {
    (0..500).map(|s| traj(algo, n, s)).find(|t| t.len() == len).expect("no trajectory of requested length")
}

fn data(algo: AlgorithmId, n: usize, count: u64) -> TaskData {
    TaskData {
        algorithm: algo,
        train: (0..count).map(|s| traj(algo, n, s)).collect(),
        val: (100..104).map(|s| traj(algo, n, s)).collect(),
    }
}

fn spec(kind: FeatureType, location: Location) -> FeatureSpec {
    FeatureSpec::new("x", Stage::Hint, location, kind)
}

#[test]
fn saturated_and_uniform_pointer_losses() {
    let s = spec(FeatureType::Pointer, Location::Node);
    let truth = Tensor::Index(vec![1, 2, 0, 3]);
    let mut sat = Array2::from_elem((4, 4), -100.0);
    for (i, &j) in [1usize, 2, 0, 3].iter().enumerate() {
        sat[[i, j]] = 100.0;
    }
    assert!(hint_loss(&sat, &truth, &s, 4).unwrap() < 1e-12);
    let flat = Array2::zeros((4, 4));
    assert!((hint_loss(&flat, &truth, &s, 4).unwrap() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = spec(FeatureType::Pointer, Location::Node);
    for _ in 0..20 {
        let n = rng.gen_range(2..7);
        let logits = Array2::from_shape_fn((n, n), |_| rng.gen_range(-3.0..3.0));
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let truth = Tensor::Index(targets.iter().map(|&t| t as i32).collect());
        let expect = (0..n)
            .map(|i| {
                let lse = (0..n).map(|j| f64::exp(logits[[i, j]])).sum::<f64>().ln();
                lse - logits[[i, targets[i]]]
            })
            .sum::<f64>()
            / n as f64;
        assert!((hint_loss(&logits, &truth, &s, n).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn mask_scalar_and_mask_one_losses() {
    let x = Array2::from_shape_vec((3, 1), vec![0.3, -1.2, 2.0]).unwrap();
    let mask = Tensor::Float(vec![1.0, 0.0, 1.0]);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let bce = -(sig(0.3).ln() + (1.0 - sig(-1.2)).ln() + sig(2.0).ln()) / 3.0;
    assert!((hint_loss(&x, &mask, &spec(FeatureType::Mask, Location::Node), 3).unwrap() - bce).abs() < 1e-12);
    let target = Tensor::Float(vec![0.5, -1.0, 1.0]);
    let mse = (0.2f64.powi(2) + 0.2f64.powi(2) + 1.0) / 3.0;
    assert!((hint_loss(&x, &target, &spec(FeatureType::Scalar, Location::Node), 3).unwrap() - mse).abs() < 1e-12);
    let hot = Tensor::Float(vec![0.0, 0.0, 1.0]);
    let lse = (0.3f64.exp() + (-1.2f64).exp() + 2.0f64.exp()).ln();
    let got = hint_loss(&x, &hot, &spec(FeatureType::MaskOne, Location::Node), 3).unwrap();
    assert!((got - (lse - 2.0)).abs() < 1e-12);
}

#[test]
fn zero_lambda_leaves_total_unchanged() {
    let algo = AlgorithmId::ActivitySelector;
    let m = Model::new(cfg(HistoryMode::Gated, 6, 2), &[algo]).unwrap();
    let t = traj(algo, 5, 3);
    let f = m.forward_trajectory(&t, &ForwardOptions::default()).unwrap();
    let b = total_loss(&f, &t, 0.0).unwrap();
    assert!(b.gate_penalty_raw > 0.0);
    assert_eq!(b.total, b.hint_loss + b.output_loss);
    let b3 = total_loss(&f, &t, 3.0).unwrap();
    assert!((b3.total - (b.total + 3.0 * b.gate_penalty_raw)).abs() < 1e-12);
    assert_eq!(b3.gate_penalty, 3.0 * b3.gate_penalty_raw);
}

#[test]
fn penalty_hand_computed() {
    let algo = AlgorithmId::ActivitySelector;
    let t = traj_with_len(algo, 2, 3);
    let m = Model::new(cfg(HistoryMode::Gated, 2, 3), &[algo]).unwrap();
    let mut f = m.forward_trajectory(&t, &ForwardOptions::default()).unwrap();
    assert_eq!(f.records.len(), 2);
    f.records[0].gate_values = Some(Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 1.0, 0.0]).unwrap());
    f.records[1].gate_values = Some(Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 0.6, 0.8]).unwrap());
    let b = total_loss(&f, &t, 1.0).unwrap();
    let expect = ((0.5f64.sqrt() + 1.0) + 1.0) / 2.0;
    assert!((b.gate_penalty_raw - expect).abs() < 1e-12);
    for g in f.records.iter_mut() {
        g.gate_values = Some(Array2::zeros((2, 2)));
    }
    let z = total_loss(&f, &t, 5.0).unwrap();
    assert_eq!(z.gate_penalty_raw, 0.0);
    assert_eq!(z.total, z.hint_loss + z.output_loss);
}

#[test]
fn step_losses_sum_to_hint_sum() {
    let algo = AlgorithmId::BubbleSort;
    let m = Model::new(cfg(HistoryMode::Baseline, 6, 4), &[algo]).unwrap();
    let t = traj(algo, 5, 1);
    let (b, _) = loss_and_grad(&m, &t, 0.0, true).unwrap();
    assert_eq!(b.step_losses.len(), t.len() - 1);
    assert!((b.step_losses.iter().sum::<f64>() - b.hint_loss_sum).abs() < 1e-9);
    assert!((b.hint_loss * b.step_losses.len() as f64 - b.hint_loss_sum).abs() < 1e-9);
    for (s, per) in b.step_losses.iter().zip(&b.hint_losses) {
        assert!((per.values().sum::<f64>() - s).abs() < 1e-12);
    }
}

fn check_gradients(algo: AlgorithmId, n: usize, len: usize) {
    let t = traj_with_len(algo, n, len);
    for mode in HistoryMode::ALL {
        let m = Model::new(cfg(mode, 4, 7), &[algo]).unwrap();
        let lambda = if mode == HistoryMode::Gated { 0.3 } else { 0.0 };
        for c in gradient_check(&m, &t, lambda, 1e-4).unwrap() {
            assert!(c.rel_error < 1e-3, "{algo} {mode} {}: {c:?}", c.name);
        }
    }
}

#[test]
fn gradients_match_finite_differences_two_step_toy() {
    check_gradients(AlgorithmId::ActivitySelector, 2, 3);
}

#[test]
fn gradients_match_finite_differences_edge_and_graph_features() {
    check_gradients(AlgorithmId::FloydWarshall, 3, 3);
    check_gradients(AlgorithmId::BinarySearch, 3, 3);
}

fn small_train(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 4, lr: 0.003, eval_every: steps.max(1), ..Default::default() }
}

#[test]
fn zero_lambda_training_matches_unpenalised_training() {
    let d = [data(AlgorithmId::Minimum, 4, 8)];
    let mc = cfg(HistoryMode::Gated, 6, 5);
    let tc = small_train(4);
    let run = |include: bool| {
        let mut tr = Trainer::new(Model::new(mc.clone(), &[AlgorithmId::Minimum]).unwrap(), tc.clone(), &d).unwrap();
        tr.include_penalty = include;
        tr.run_until(4, |_, _| Ok(())).unwrap();
        tr.model.params.values().to_vec()
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn training_is_reproducible_and_logs_every_step() {
    let d = data(AlgorithmId::InsertionSort, 4, 6);
    let mc = cfg(HistoryMode::Gated, 6, 1);
    let tc = TrainConfig { eval_every: 3, ..small_train(7) };
    let (m1, l1) = train(&d, &mc, &tc).unwrap();
    let (m2, l2) = train(&d, &mc, &tc).unwrap();
    assert_eq!(l1.to_jsonl().unwrap(), l2.to_jsonl().unwrap());
    assert_eq!(m1.params.values(), m2.params.values());
    assert_eq!(l1.len(), 7);
    let evals: Vec<usize> = l1.records.iter().filter(|r| r.val_micro_f1.is_some()).map(|r| r.step).collect();
    assert_eq!(evals, vec![0, 3, 6]);
    assert!(l1.records.iter().filter(|r| r.val_micro_f1.is_some()).all(|r| r.gate_norm.is_some()));
    for r in &l1.records {
        assert_eq!(r.per_exec_step_losses.len(), r.per_exec_step_counts.len());
        assert!((r.per_exec_step_losses.iter().sum::<f64>() - r.hint_loss_sum).abs() < 1e-9);
        assert!(r.lr <= tc.lr);
    }
}

#[test]
fn zero_steps_gives_initial_model() {
    let d = data(AlgorithmId::Minimum, 3, 3);
    let mc = cfg(HistoryMode::Baseline, 4, 2);
    let (m, log) = train(&d, &mc, &TrainConfig { steps: 0, ..Default::default() }).unwrap();
    assert!(log.is_empty());
    assert_eq!(m.params.values(), Model::new(mc, &[AlgorithmId::Minimum]).unwrap().params.values());
}

#[test]
fn round_robin_multi_task_sharing() {
    let algos = [AlgorithmId::Minimum, AlgorithmId::InsertionSort, AlgorithmId::BinarySearch];
    let d: Vec<TaskData> = algos.iter().map(|&a| data(a, 4, 4)).collect();
    let mc = cfg(HistoryMode::Gated, 4, 3);
    let (m, log) = train_multi_task(&d, &mc, &small_train(9)).unwrap();
    for a in algos {
        assert_eq!(log.records.iter().filter(|r| r.algorithm == a).count(), 3);
    }
    assert_eq!(log.records[0].val_by_algorithm.len(), 3);
    assert!(log.records.iter().enumerate().all(|(s, r)| r.algorithm == algos[s % 3]));
    let init = Model::new(mc, &algos).unwrap();
    for id in m.shared_param_ids() {
        assert_ne!(m.params.get(id), init.params.get(id), "{}", m.params.name(id));
    }
    for a in algos {
        assert!(m.task_param_ids(a).unwrap().iter().any(|&id| m.params.get(id) != init.params.get(id)));
    }
}

#[test]
fn single_task_step_only_touches_shared_and_own_params() {
    let algos = [AlgorithmId::Minimum, AlgorithmId::Bfs];
    let d: Vec<TaskData> = algos.iter().map(|&a| data(a, 4, 4)).collect();
    let mc = cfg(HistoryMode::Gated, 4, 3);
    let mut tr = Trainer::new(Model::new(mc.clone(), &algos).unwrap(), small_train(2), &d).unwrap();
    tr.step_once().unwrap();
    let init = Model::new(mc, &algos).unwrap();
    for id in tr.model.task_param_ids(AlgorithmId::Bfs).unwrap() {
        assert_eq!(tr.model.params.get(id), init.params.get(id));
    }
}

#[test]
fn diverging_inputs_are_reported() {
    let algo = AlgorithmId::Minimum;
    let mut d = data(algo, 3, 2);
    for t in &mut d.train {
        t.instance.inputs.insert("key".into(), Tensor::Float(vec![f32::INFINITY; 3]));
    }
    let err = train(&d, &cfg(HistoryMode::Baseline, 4, 0), &small_train(2)).unwrap_err();
    assert!(matches!(err, Error::TrainingDiverged { step: 0, .. }), "{err:?}");
}

#[test]
fn cosine_schedule_endpoints() {
    let tc = TrainConfig { steps: 100, lr: 0.01, ..Default::default() };
    assert_eq!(lr_at(&tc, 0), 0.01);
    assert!((lr_at(&tc, 50) - 0.005).abs() < 1e-15);
    assert!(lr_at(&tc, 99) < 1e-5);
}

#[test]
fn lambda_ratio_examples() {
    assert_eq!(lambda_ratio(0.8, 4.0), (0.2, false));
    assert_eq!(lambda_ratio(1.5, 0.5), (3.0, false));
    assert_eq!(lambda_ratio(0.7, 0.0), (0.0, true));
}

#[test]
fn lambda_from_log_averages_the_tail() {
    let mut log = RunLog::default();
    for s in 0..10 {
        log.push(LogRecord {
            step: s,
            algorithm: AlgorithmId::Minimum,
            lr: 0.0,
            total: 0.0,
            hint_loss: s as f64,
            hint_loss_sum: 0.0,
            output_loss: 1.0,
            gate_penalty_raw: 2.0 * (s + 1) as f64,
            lambda: 0.0,
            per_exec_step_losses: vec![],
            per_exec_step_counts: vec![],
            batch_size: 1,
            grad_norm: 0.0,
            gate_norm: None,
            val_micro_f1: None,
            val_by_algorithm: Default::default(),
        });
    }
    let (l, p) = lambda_from_log(&log, 2).unwrap();
    assert_eq!(l, (8.0 + 1.0 + 9.0 + 1.0) / 2.0);
    assert_eq!(p, (18.0 + 20.0) / 2.0);
    assert!(lambda_from_log(&RunLog::default(), 1).is_err());
}

#[test]
fn calibration_pilot_runs_sixty_percent() {
    let d = [data(AlgorithmId::Minimum, 4, 4)];
    let mc = cfg(HistoryMode::Baseline, 4, 8);
    let tc = TrainConfig { eval_every: 5, ..small_train(10) };
    let c = calibrate_lambda(&d, &mc, &tc).unwrap();
    assert_eq!(c.pilot_steps, 6);
    assert_eq!(c.window, 1);
    assert_eq!(c.pilot_log.len(), 6);
    assert!(c.pilot_log.records.iter().all(|r| r.val_micro_f1.is_none() && r.lambda == 0.0));
    assert!(c.p_hat > 0.0 && !c.degenerate);
    assert!((c.lambda * c.p_hat - c.l_hat).abs() < 1e-12);
}
