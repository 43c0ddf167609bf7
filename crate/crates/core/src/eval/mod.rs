//! Scoring and telemetry.
//!
//! Output predictions are hardened before scoring: argmax for pointers,
//! mask_one and categorical features, a zero-logit threshold (probability
//! 0.5) for masks, and the raw value for scalars. A scalar counts as correct
//! when `|p - t| <= 1e-3 * max(|t|, 1)`.
//!
//! micro-F1 pools true positives, false positives and false negatives over
//! every output element of every trajectory:
//!
//! * mask elements are binary: predicted 1 and true 1 is a true positive,
//!   predicted 1 and true 0 a false positive, predicted 0 and true 1 a false
//!   negative;
//! * every other element (one pointer row, one mask_one vector, one
//!   categorical element, one scalar) is a single labelled decision: correct
//!   is a true positive, wrong is one false positive plus one false negative.
//!
//! `F1 = 2TP / (2TP + FP + FN)`, defined as 1 when nothing was positive.

mod curves;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use curves::{gate_norm_curve, per_step_loss_curves, quartile, write_curve_csv, GateTelemetry, LossCurves};

use crate::error::{Error, Result};
use crate::model::{ForwardOptions, Model, PredictionSet, ProcessorStepRecord};
use crate::traces::tensor::hot_index;
use crate::traces::{AlgorithmId, FeatureMap, FeatureSpec, FeatureType, Tensor, Trajectory};

/// Relative tolerance for scalar outputs.
pub const SCALAR_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    fn decision(&mut self, correct: bool) {
        if correct {
            self.tp += 1;
        } else {
            self.fp += 1;
            self.fn_ += 1;
        }
    }
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in row.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Converts raw decoder output into a hard tensor in storage format.
pub fn harden(spec: &FeatureSpec, pred: &Array2<f64>, n: usize) -> Result<Tensor> {
    let expect = crate::model::prediction_shape(spec, n);
    if pred.dim() != expect {
        return Err(Error::SchemaMismatch(format!(
            "prediction for `{}` has shape {:?}, expected {expect:?}",
            spec.name,
            pred.dim()
        )));
    }
    Ok(match spec.kind {
        FeatureType::Scalar => Tensor::Float(pred.iter().map(|&x| x as f32).collect()),
        FeatureType::Mask => Tensor::Float(pred.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect()),
        FeatureType::MaskOne => Tensor::one_hot(argmax(pred.iter().cloned()), n),
        FeatureType::Categorical => {
            let c = pred.ncols();
            let mut v = vec![0.0; pred.len()];
            for (r, row) in pred.rows().into_iter().enumerate() {
                v[r * c + argmax(row.iter().cloned())] = 1.0;
            }
            Tensor::Float(v)
        }
        FeatureType::Pointer => {
            Tensor::pointers(&pred.rows().into_iter().map(|r| argmax(r.iter().cloned())).collect::<Vec<_>>())
        }
    })
}

fn scalar_ok(p: f32, t: f32) -> bool {
    ((p - t).abs() as f64) <= SCALAR_TOLERANCE * (t.abs() as f64).max(1.0)
}

/// Confusion counts of one hard prediction against its truth.
pub fn feature_counts(spec: &FeatureSpec, pred: &Tensor, truth: &Tensor, n: usize) -> Result<Counts> {
    pred.check(spec, n)
        .map_err(|e| Error::SchemaMismatch(format!("prediction for `{}`: {e}", spec.name)))?;
    truth
        .check(spec, n)
        .map_err(|e| Error::SchemaMismatch(format!("truth for `{}`: {e}", spec.name)))?;
    let mut c = Counts::default();
    match spec.kind {
        FeatureType::Pointer => {
            let (p, t) = (pred.as_indices().unwrap(), truth.as_indices().unwrap());
            p.iter().zip(t).for_each(|(a, b)| c.decision(a == b));
        }
        FeatureType::Mask => {
            let (p, t) = (pred.as_floats().unwrap(), truth.as_floats().unwrap());
            for (&a, &b) in p.iter().zip(t) {
                match (a > 0.5, b > 0.5) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        FeatureType::MaskOne => {
            c.decision(hot_index(pred.as_floats().unwrap()) == hot_index(truth.as_floats().unwrap()))
        }
        FeatureType::Categorical => {
            let k = spec.num_classes.unwrap_or(1);
            let (p, t) = (pred.as_floats().unwrap(), truth.as_floats().unwrap());
            p.chunks(k).zip(t.chunks(k)).for_each(|(a, b)| c.decision(hot_index(a) == hot_index(b)));
        }
        FeatureType::Scalar => {
            let (p, t) = (pred.as_floats().unwrap(), truth.as_floats().unwrap());
            p.iter().zip(t).for_each(|(&a, &b)| c.decision(scalar_ok(a, b)));
        }
    }
    Ok(c)
}

fn node_count(spec: &FeatureSpec, t: &Tensor) -> Result<usize> {
    let len = t.len();
    let per = spec.width();
    let elems = len / per.max(1);
    let n = match spec.location {
        crate::traces::Location::Node => elems,
        crate::traces::Location::Edge => (elems as f64).sqrt().round() as usize,
        crate::traces::Location::Graph => {
            return Err(Error::SchemaMismatch("graph feature cannot fix the node count".into()))
        }
    };
    Ok(n)
}

/// micro-F1 over hard predictions. Each map holds the output features of one
/// trajectory; node counts are read from the truth tensors.
pub fn micro_f1(predictions: &[FeatureMap], truths: &[FeatureMap], specs: &[FeatureSpec]) -> Result<f64> {
    Ok(pooled_counts(predictions, truths, specs)?.0.f1())
}

fn pooled_counts(
    predictions: &[FeatureMap],
    truths: &[FeatureMap],
    specs: &[FeatureSpec],
) -> Result<(Counts, BTreeMap<String, Counts>)> {
    if predictions.len() != truths.len() {
        return Err(Error::SchemaMismatch("prediction and truth counts differ".into()));
    }
    let n_of = |t: &FeatureMap| -> Result<usize> {
        specs
            .iter()
            .find(|s| s.location != crate::traces::Location::Graph)
            .map(|s| {
                let v = t.get(&s.name).ok_or_else(|| Error::SchemaMismatch(format!("truth lacks `{}`", s.name)))?;
                node_count(s, v)
            })
            .unwrap_or(Ok(1))
    };
    let mut total = Counts::default();
    let mut per: BTreeMap<String, Counts> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let n = n_of(t)?;
        for spec in specs {
            let get = |m: &FeatureMap, what: &str| {
                m.get(&spec.name).ok_or_else(|| Error::SchemaMismatch(format!("{what} lacks `{}`", spec.name))).cloned()
            };
            let c = feature_counts(spec, &get(p, "prediction")?, &get(t, "truth")?, n)?;
            total.add(c);
            per.entry(spec.name.clone()).or_default().add(c);
        }
    }
    Ok((total, per))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: AlgorithmId,
    pub split: Split,
    pub n_eval: usize,
    pub micro_f1: f64,
    pub per_spec_scores: BTreeMap<String, f64>,
    pub num_trajectories: usize,
}

/// Raw output logits of one evaluated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawOutput {
    pub n: usize,
    pub outputs: BTreeMap<String, RawMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RawMatrix {
    fn from_array(a: &Array2<f64>) -> Self {
        Self { rows: a.nrows(), cols: a.ncols(), data: a.iter().cloned().collect() }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Format(format!("raw prediction matrix: {e}")))
    }
}

/// Everything needed to rescore an evaluation offline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPredictions {
    pub algorithm: AlgorithmId,
    pub split: Split,
    pub predictions: Vec<RawOutput>,
}

/// Scores raw predictions against the trajectories they were produced from.
pub fn rescore(raw: &RawPredictions, trajectories: &[Trajectory]) -> Result<EvalReport> {
    if trajectories.is_empty() {
        return Err(Error::EmptyEvaluation(format!("{} {}", raw.algorithm, raw.split.name())));
    }
    if raw.predictions.len() != trajectories.len() {
        return Err(Error::SchemaMismatch("raw predictions do not match the trajectory count".into()));
    }
    let schema = raw.algorithm.schema();
    let specs: Vec<FeatureSpec> = schema.stage(crate::traces::Stage::Output).cloned().collect();
    let mut preds = Vec::with_capacity(trajectories.len());
    for (r, traj) in raw.predictions.iter().zip(trajectories) {
        if r.n != traj.n() || traj.algorithm() != raw.algorithm {
            return Err(Error::SchemaMismatch("raw prediction belongs to a different trajectory".into()));
        }
        let mut m = FeatureMap::new();
        for spec in &specs {
            let a = r
                .outputs
                .get(&spec.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("raw predictions lack `{}`", spec.name)))?
                .to_array()?;
            m.insert(spec.name.clone(), harden(spec, &a, r.n)?);
        }
        preds.push(m);
    }
    let truths: Vec<FeatureMap> = trajectories.iter().map(|t| t.outputs.clone()).collect();
    let (total, per) = pooled_counts(&preds, &truths, &specs)?;
    Ok(EvalReport {
        algorithm: raw.algorithm,
        split: raw.split,
        n_eval: trajectories.iter().map(Trajectory::n).max().unwrap_or(0),
        micro_f1: total.f1(),
        per_spec_scores: per.into_iter().map(|(k, c)| (k, c.f1())).collect(),
        num_trajectories: trajectories.len(),
    })
}

/// Mean normalised norm of the carried history over steps and nodes.
pub fn carried_norm(records: &[ProcessorStepRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in records {
        let h = r.carried.ncols() as f64;
        for row in r.carried.rows() {
            total += row.iter().map(|x| x * x).sum::<f64>().sqrt() / h.sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Result of running a model over one split.
pub struct Evaluation {
    pub report: EvalReport,
    pub raw: RawPredictions,
    /// Mean over trajectories of [`carried_norm`].
    pub gate_norm: f64,
}

/// Runs the model over `trajectories` and scores the outputs.
pub fn evaluate(model: &Model, algorithm: AlgorithmId, split: Split, trajectories: &[Trajectory]) -> Result<Evaluation> {
    if trajectories.is_empty() {
        return Err(Error::EmptyEvaluation(format!("{algorithm} {}", split.name())));
    }
    let mut predictions = Vec::with_capacity(trajectories.len());
    let mut norm = 0.0;
    for traj in trajectories {
        if traj.algorithm() != algorithm {
            return Err(Error::SchemaMismatch(format!("{} trajectory in {algorithm} evaluation", traj.algorithm())));
        }
        let fwd = model.forward_trajectory(traj, &ForwardOptions::default())?;
        norm += carried_norm(&fwd.records);
        predictions.push(raw_output(traj.n(), &fwd.output_predictions));
    }
    let raw = RawPredictions { algorithm, split, predictions };
    let report = rescore(&raw, trajectories)?;
    Ok(Evaluation { report, raw, gate_norm: norm / trajectories.len() as f64 })
}

fn raw_output(n: usize, preds: &PredictionSet) -> RawOutput {
    RawOutput { n, outputs: preds.iter().map(|(k, v)| (k.clone(), RawMatrix::from_array(v))).collect() }
}

/// Evaluates every provided split, requiring each evaluation size to exceed
/// the largest training size for the test split.
pub fn evaluate_ood(
    model: &Model,
    algorithm: AlgorithmId,
    train_max_n: usize,
    splits: &[(Split, &[Trajectory])],
) -> Result<Vec<Evaluation>> {
    let mut out = Vec::new();
    for &(split, trajs) in splits {
        let ev = evaluate(model, algorithm, split, trajs)?;
        if split == Split::Test && ev.report.n_eval <= train_max_n {
            return Err(Error::InvalidConfig(format!(
                "test size {} is not larger than the training size {train_max_n}",
                ev.report.n_eval
            )));
        }
        out.push(ev);
    }
    Ok(out)
}
