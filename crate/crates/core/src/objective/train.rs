use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{breakdown, objective_on_tape, LogRecord, RunLog};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Split};
use crate::model::tape::Tape;
use crate::model::{Model, ModelConfig};
use crate::traces::{AlgorithmId, Trajectory};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 16, lr: 0.0015, schedule: Schedule::Cosine, clip_norm: 1.0, eval_every: 100, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.steps > 0 && self.steps < self.eval_every {
            return bad("steps must be at least eval_every");
        }
        Ok(())
    }
}

/// Learning rate for optimizer step `step` (0-based).
pub fn lr_at(config: &TrainConfig, step: usize) -> f64 {
    match config.schedule {
        Schedule::Cosine => {
            let frac = if config.steps == 0 { 0.0 } else { step as f64 / config.steps as f64 };
            config.lr * 0.5 * (1.0 + (PI * frac).cos())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        Self { m: model.params.zeros_like(), v: model.params.zeros_like(), t: 0 }
    }
}

/// Training and validation trajectories of one algorithm.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub algorithm: AlgorithmId,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
}

/// Resumable optimisation state. Step `s` trains algorithm `s mod k` of the
/// `k` tasks on a batch drawn from a generator keyed by `(seed, s)`.
pub struct Trainer<'a> {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    /// Optimizer steps already applied.
    pub step: usize,
    /// Whether the λ-weighted penalty term enters the objective at all.
    pub include_penalty: bool,
    /// Whether evaluation steps run validation.
    pub validate: bool,
    tasks: Vec<&'a TaskData>,
    update_ids: Vec<Vec<usize>>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, config: TrainConfig, tasks: &'a [TaskData]) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("no training tasks".into()));
        }
        let mut update_ids = Vec::new();
        for t in tasks {
            if t.train.is_empty() {
                return Err(Error::DatasetNotFound(format!("{} training split is empty", t.algorithm)));
            }
            if let Some(bad) = t.train.iter().chain(&t.val).find(|x| x.algorithm() != t.algorithm) {
                return Err(Error::SchemaMismatch(format!("{} trajectory in {} data", bad.algorithm(), t.algorithm)));
            }
            let mut ids = model.shared_param_ids();
            ids.extend(model.task_param_ids(t.algorithm)?);
            ids.sort_unstable();
            update_ids.push(ids);
        }
        let adam = AdamState::new(&model);
        Ok(Self { model, config, adam, step: 0, include_penalty: true, validate: true, tasks: tasks.iter().collect(), update_ids })
    }

    /// Algorithm trained at step `s`.
    pub fn task_at(&self, s: usize) -> AlgorithmId {
        self.tasks[s % self.tasks.len()].algorithm
    }

    pub fn is_eval_step(&self, s: usize) -> bool {
        s.is_multiple_of(self.config.eval_every) || s + 1 == self.config.steps
    }

    fn batch(&self, s: usize, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(s as u64);
        sample(&mut rng, len, self.config.batch_size.min(len)).into_vec()
    }

    /// Validation micro-F1 and carried-state norm per algorithm.
    pub fn validation(&self) -> Result<BTreeMap<AlgorithmId, (f64, f64)>> {
        let mut out = BTreeMap::new();
        for t in &self.tasks {
            if t.val.is_empty() {
                continue;
            }
            let ev = evaluate(&self.model, t.algorithm, Split::Val, &t.val)?;
            out.insert(t.algorithm, (ev.report.micro_f1, ev.gate_norm));
        }
        Ok(out)
    }

    /// Runs optimizer step `self.step` and returns its log record.
    pub fn step_once(&mut self) -> Result<LogRecord> {
        let s = self.step;
        let k = s % self.tasks.len();
        let task = self.tasks[k];
        let lambda = self.model.config.lambda;
        let diverged = |loss: f64| Error::TrainingDiverged { step: s, loss };

        let (mut gate_norm, mut val_f1, mut val_by) = (None, None, BTreeMap::new());
        if self.validate && self.is_eval_step(s) {
            let v = self.validation().map_err(|e| match e {
                Error::NumericalError(_) => diverged(f64::NAN),
                e => e,
            })?;
            if !v.is_empty() {
                let m = v.len() as f64;
                val_f1 = Some(v.values().map(|x| x.0).sum::<f64>() / m);
                gate_norm = Some(v.values().map(|x| x.1).sum::<f64>() / m);
                val_by = v.into_iter().map(|(a, x)| (a, x.0)).collect();
            }
        }

        let idx = self.batch(s, task.train.len());
        let b = idx.len() as f64;
        let mut grads = self.model.params.zeros_like();
        let (mut total, mut hint, mut hint_sum, mut out, mut pen) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut per_step: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for &i in &idx {
            let traj = &task.train[i];
            let mut tape = Tape::new(&self.model.params);
            let (ids, _) = objective_on_tape(&mut tape, &self.model, traj, lambda, self.include_penalty)
                .map_err(|e| match e {
                    Error::NumericalError(_) => diverged(f64::NAN),
                    e => e,
                })?;
            let bd = breakdown(&tape, &ids, lambda);
            if !bd.total.is_finite() {
                return Err(diverged(bd.total));
            }
            for (g, d) in grads.iter_mut().zip(tape.backward(ids.total)) {
                *g += &d;
            }
            total += bd.total;
            hint += bd.hint_loss;
            hint_sum += bd.hint_loss_sum;
            out += bd.output_loss;
            pen += bd.gate_penalty_raw;
            if per_step.len() < bd.step_losses.len() {
                per_step.resize(bd.step_losses.len(), 0.0);
                counts.resize(bd.step_losses.len(), 0);
            }
            for (t, l) in bd.step_losses.iter().enumerate() {
                per_step[t] += l;
                counts[t] += 1;
            }
        }

        let ids = &self.update_ids[k];
        let mut sq = 0.0;
        for &p in ids {
            grads[p] /= b;
            sq += grads[p].iter().map(|x| x * x).sum::<f64>();
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(diverged(grad_norm));
        }
        let clip = if grad_norm > self.config.clip_norm { self.config.clip_norm / grad_norm } else { 1.0 };
        let lr = lr_at(&self.config, s);
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for &p in ids {
            let g = &grads[p];
            let param = self.model.params.get_mut(p);
            Zip::from(param)
                .and(&mut self.adam.m[p])
                .and(&mut self.adam.v[p])
                .and(g)
                .for_each(|w, m, v, &g| {
                    let g = g * clip;
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                });
        }
        self.step += 1;
        Ok(LogRecord {
            step: s,
            algorithm: task.algorithm,
            lr,
            total: total / b,
            hint_loss: hint / b,
            hint_loss_sum: hint_sum / b,
            output_loss: out / b,
            gate_penalty_raw: pen / b,
            lambda,
            per_exec_step_losses: per_step.into_iter().map(|x| x / b).collect(),
            per_exec_step_counts: counts,
            batch_size: idx.len(),
            grad_norm,
            gate_norm,
            val_micro_f1: val_f1,
            val_by_algorithm: if self.tasks.len() > 1 { val_by } else { BTreeMap::new() },
        })
    }

    /// Runs steps until `until` (capped at the configured total), handing
    /// every record to `sink`.
    pub fn run_until(&mut self, until: usize, mut sink: impl FnMut(&Self, &LogRecord) -> Result<()>) -> Result<()> {
        while self.step < until.min(self.config.steps) {
            let rec = self.step_once()?;
            sink(self, &rec)?;
        }
        Ok(())
    }
}

/// Trains one algorithm from fresh parameters.
pub fn train(data: &TaskData, model_config: &ModelConfig, train_config: &TrainConfig) -> Result<(Model, RunLog)> {
    train_multi_task(std::slice::from_ref(data), model_config, train_config)
}

/// Trains one shared processor (and gate) with per-algorithm encoders and
/// decoders, visiting the algorithms round-robin.
pub fn train_multi_task(
    data: &[TaskData],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(Model, RunLog)> {
    let algos: Vec<AlgorithmId> = data.iter().map(|d| d.algorithm).collect();
    let model = Model::new(model_config.clone(), &algos)?;
    let mut trainer = Trainer::new(model, train_config.clone(), data)?;
    let mut log = RunLog::default();
    trainer.run_until(train_config.steps, |_, r| {
        log.push(r.clone());
        Ok(())
    })?;
    Ok((trainer.model, log))
}
