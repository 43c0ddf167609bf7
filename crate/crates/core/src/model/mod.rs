//! Encoder-processor-decoder network over algorithm traces.
//!
//! Each processor step consumes `z_i = [x̄_i, h̃_i]` where `x̄` is the encoded
//! step and `h̃` the carried history:
//!
//! * baseline: `h̃ = h_prev`;
//! * forget: `h̃ = 0`;
//! * gated: `h̃ = g ⊙ h_prev` with `g = sigmoid(mlp([x̄, h_prev]))`.
//!
//! The processor is a max-aggregating message-passing layer over the fully
//! connected graph, optionally with triplet messages, followed by a layer
//! normalised readout. Every algorithm has its own encoders and decoders; the
//! processor and gate are shared when several algorithms live in one model.
//!
//! A trajectory of `T` hints is unrolled for `max(1, T - 1)` processor steps.
//! Step `t` reads hint `t - 1` (ground truth for the first step, the model's
//! own soft prediction afterwards) and is scored against hint `t`. Outputs
//! are decoded from the final step.

mod features;
mod layout;
mod params;
pub mod tape;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use features::{encoder_input, hint_loss, prediction_shape};
pub(crate) use features::spec_loss as spec_loss_id;
pub use layout::{GATE_BIAS_INIT, TRIPLET_DIM};
pub use params::ParamStore;

use crate::error::{Error, Result};
use crate::traces::{AlgorithmId, FeatureMap, FeatureSpec, Location, Stage, Trajectory};
use layout::{DecoderParams, GateParams, Init, ProcessorParams, TaskParams};
use tape::{Id, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    Baseline,
    Forget,
    Gated,
}

impl HistoryMode {
    pub const ALL: [HistoryMode; 3] = [HistoryMode::Baseline, HistoryMode::Forget, HistoryMode::Gated];

    pub fn name(self) -> &'static str {
        match self {
            HistoryMode::Baseline => "baseline",
            HistoryMode::Forget => "forget",
            HistoryMode::Gated => "gated",
        }
    }
}

impl std::fmt::Display for HistoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HistoryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HistoryMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown history mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub history_mode: HistoryMode,
    pub use_triplets: bool,
    pub gate_hidden_dim: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            history_mode: HistoryMode::Baseline,
            use_triplets: true,
            gate_hidden_dim: 128,
            lambda: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.gate_hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden dimensions must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.lambda != 0.0 && self.history_mode != HistoryMode::Gated {
            return Err(Error::InvalidConfig("lambda must be 0 unless history_mode is gated".into()));
        }
        Ok(())
    }
}

/// Replaces the learned gate with a constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateOverride {
    #[default]
    Learned,
    /// `g = 1` everywhere.
    Open,
    /// `g = 0` everywhere.
    Closed,
}

/// Hook applied to the carried latent state after each processor step.
pub type CarryHook<'a> = &'a dyn Fn(usize, &mut Array2<f64>);

#[derive(Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    /// Run with this history mode instead of the configured one.
    pub mode: Option<HistoryMode>,
    pub gate: GateOverride,
    /// Called with the step index and the latent state about to be carried
    /// into the next step; any change is seen only through the history slot.
    pub carry: Option<CarryHook<'a>>,
}

/// Encoded features of one step: `x̄` (`n × H`), `ē` (`n² × H`), `ḡ` (`1 × H`).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedStep {
    pub node_emb: Array2<f64>,
    pub edge_emb: Array2<f64>,
    pub graph_emb: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub h: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessorStepRecord {
    /// Processor input `[x̄, h̃]`, `n × 2H`.
    pub z: Array2<f64>,
    pub gate_values: Option<Array2<f64>>,
    /// The history actually fed to the processor, `h̃`.
    pub carried: Array2<f64>,
    pub h_next: LatentState,
}

/// Raw decoder outputs keyed by feature name; see [`prediction_shape`].
pub type PredictionSet = BTreeMap<String, Array2<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    /// One entry per scored step (empty for single-hint trajectories).
    pub hint_predictions: Vec<PredictionSet>,
    pub output_predictions: PredictionSet,
    pub records: Vec<ProcessorStepRecord>,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    processor: ProcessorParams,
    gate: Option<GateParams>,
    tasks: BTreeMap<AlgorithmId, TaskParams>,
    order: Vec<AlgorithmId>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        let mut m = Model::new(self.config.clone(), &self.order).expect("layout was valid");
        m.params = self.params.clone();
        m
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("algorithms", &self.order)
            .field("num_params", &self.params.num_scalars())
            .finish()
    }
}

/// Node ids of an encoded step on a tape.
#[derive(Clone, Copy)]
pub(crate) struct EncIds {
    pub node: Id,
    pub edge: Id,
    pub graph: Id,
}

#[derive(Clone, Copy)]
pub(crate) struct StepIds {
    pub z: Id,
    pub gate: Option<Id>,
    pub carried: Id,
    pub h_next: Id,
}

pub(crate) struct Unrolled {
    pub enc: Vec<EncIds>,
    pub steps: Vec<StepIds>,
    pub hint_preds: Vec<BTreeMap<String, Id>>,
    pub output_preds: BTreeMap<String, Id>,
}

impl Model {
    /// Fresh parameters for the given algorithms. Initialisation order is the
    /// processor, then each algorithm's encoders and decoders, then the gate,
    /// so models differing only in history mode share all other tensors.
    pub fn new(config: ModelConfig, algorithms: &[AlgorithmId]) -> Result<Self> {
        config.validate()?;
        if algorithms.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one algorithm".into()));
        }
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let h = config.hidden_dim;
        let processor = ProcessorParams::build(&mut init, h, config.use_triplets)?;
        let mut tasks = BTreeMap::new();
        for &algo in algorithms {
            if tasks.contains_key(&algo) {
                return Err(Error::SchemaMismatch(format!("{algo} listed twice")));
            }
            tasks.insert(algo, TaskParams::build(&mut init, algo, h)?);
        }
        let gate = if config.history_mode == HistoryMode::Gated {
            Some(GateParams::build(&mut init, h, config.gate_hidden_dim)?)
        } else {
            None
        };
        Ok(Self { config, params: store, processor, gate, tasks, order: algorithms.to_vec() })
    }

    pub fn algorithms(&self) -> &[AlgorithmId] {
        &self.order
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn task(&self, algo: AlgorithmId) -> Result<&TaskParams> {
        self.tasks
            .get(&algo)
            .ok_or_else(|| Error::SchemaMismatch(format!("model has no encoders for {algo}")))
    }

    /// Parameter ids of the processor and gate.
    pub fn shared_param_ids(&self) -> Vec<usize> {
        let mut v = self.processor.ids();
        if let Some(g) = &self.gate {
            v.extend(g.ids());
        }
        v
    }

    /// Parameter ids of one algorithm's encoders and decoders.
    pub fn task_param_ids(&self, algo: AlgorithmId) -> Result<Vec<usize>> {
        Ok(self.task(algo)?.ids())
    }

    /// Digest of the algorithms' schemas, in model order.
    pub fn schema_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for algo in &self.order {
            hasher.update(algo.name());
            hasher.update(self.tasks[algo].schema.hash());
        }
        hex::encode(hasher.finalize())
    }

    /// Replaces the parameters, which must match this model's layout.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::SchemaMismatch("parameter names differ from the model layout".into()));
        }
        for (id, v) in params.values().iter().enumerate() {
            if v.dim() != self.params.get(id).dim() {
                return Err(Error::SchemaMismatch(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    params.name(id),
                    v.dim(),
                    self.params.get(id).dim()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    // ---- tape builders ----

    fn linear(&self, tape: &mut Tape, x: Id, w: usize, b: usize) -> Id {
        let wid = tape.param(w);
        let y = tape.matmul(x, wid);
        let bid = tape.param(b);
        tape.add_row(y, bid)
    }

    fn project(&self, tape: &mut Tape, x: Id, w: usize) -> Id {
        let wid = tape.param(w);
        tape.matmul(x, wid)
    }

    /// Encodes one group of features (all inputs, or all hints) and returns
    /// the additive contributions per location.
    fn encode_group(
        &self,
        tape: &mut Tape,
        task: &TaskParams,
        stage: Stage,
        feats: &BTreeMap<String, Id>,
    ) -> Result<[Option<Id>; 3]> {
        let mut acc: [Option<Id>; 3] = [None; 3];
        for enc in task.encoders.iter().filter(|e| e.spec.stage == stage) {
            let x = *feats.get(&enc.spec.name).ok_or_else(|| {
                Error::SchemaMismatch(format!("missing {:?} feature `{}`", stage, enc.spec.name))
            })?;
            let y = self.linear(tape, x, enc.w, enc.b);
            let slot = match enc.target {
                Location::Node => 0,
                Location::Edge => 1,
                Location::Graph => 2,
            };
            acc[slot] = Some(match acc[slot] {
                Some(a) => tape.add(a, y),
                None => y,
            });
        }
        Ok(acc)
    }

    fn ground_truth_leaves(
        &self,
        tape: &mut Tape,
        task: &TaskParams,
        stage: Stage,
        values: &FeatureMap,
        n: usize,
    ) -> Result<BTreeMap<String, Id>> {
        let mut out = BTreeMap::new();
        for spec in task.schema.stage(stage) {
            let t = values
                .get(&spec.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing {:?} feature `{}`", stage, spec.name)))?;
            out.insert(spec.name.clone(), tape.leaf(encoder_input(spec, t, n)?));
        }
        Ok(out)
    }

    fn combine(&self, tape: &mut Tape, a: [Option<Id>; 3], b: [Option<Id>; 3], n: usize) -> EncIds {
        let h = self.hidden_dim();
        let rows = [n, n * n, 1];
        let mut ids = [0; 3];
        for k in 0..3 {
            ids[k] = match (a[k], b[k]) {
                (Some(x), Some(y)) => tape.add(x, y),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => tape.zeros(rows[k], h),
            };
        }
        EncIds { node: ids[0], edge: ids[1], graph: ids[2] }
    }

    pub(crate) fn gnn_core_ids(&self, tape: &mut Tape, z: Id, e: Id, g: Id, n: usize) -> Id {
        let p = &self.processor;
        let a_dst = self.project(tape, z, p.w_dst);
        let a_src = self.project(tape, z, p.w_src);
        let ai = tape.expand_i(a_dst, n);
        let aj = tape.expand_j(a_src, n);
        let pair = tape.add(ai, aj);
        let ee = self.project(tape, e, p.w_e);
        let mut pre = tape.add(pair, ee);
        let gg = self.linear(tape, g, p.w_g, p.b_m1);
        pre = tape.add_row(pre, gg);
        if let Some(t) = &p.triplet {
            let ti = self.project(tape, z, t.t_i);
            let tj = self.project(tape, z, t.t_j);
            let tk = self.project(tape, z, t.t_k);
            let e1 = self.project(tape, e, t.t_e1);
            let e2 = self.project(tape, e, t.t_e2);
            let e3 = self.project(tape, e, t.t_e3);
            let tg = self.linear(tape, g, t.t_g, t.b_t);
            let tii = tape.expand_i(ti, n);
            let tjj = tape.expand_j(tj, n);
            let base = tape.add(tii, tjj);
            let base = tape.add(base, e1);
            let base = tape.add_row(base, tg);
            let via = tape.triplet_max(tk, e2, e3, n);
            let tri = tape.add(base, via);
            let tri = self.linear(tape, tri, t.w_t, t.b_to);
            let tri = tape.relu(tri);
            pre = tape.add(pre, tri);
        }
        let act = tape.relu(pre);
        let msg = self.linear(tape, act, p.w_m2, p.b_m2);
        let agg = tape.max_aggregate(msg, n);
        let o1 = self.project(tape, z, p.w_o1);
        let o2 = self.linear(tape, agg, p.w_o2, p.b_o);
        let out = tape.add(o1, o2);
        let out = tape.relu(out);
        let normed = tape.layer_norm(out);
        let gamma = tape.param(p.gamma);
        let scaled = tape.mul_row(normed, gamma);
        let beta = tape.param(p.beta);
        tape.add_row(scaled, beta)
    }

    pub(crate) fn processor_step_ids(
        &self,
        tape: &mut Tape,
        enc: EncIds,
        h_prev: Id,
        n: usize,
        mode: HistoryMode,
        gate: GateOverride,
    ) -> Result<StepIds> {
        let h = self.hidden_dim();
        let (carried, gate_id) = match mode {
            HistoryMode::Baseline => (h_prev, None),
            HistoryMode::Forget => (tape.zeros(n, h), None),
            HistoryMode::Gated => {
                let g = match gate {
                    GateOverride::Open => tape.leaf(Array2::ones((n, h))),
                    GateOverride::Closed => tape.zeros(n, h),
                    GateOverride::Learned => {
                        let gp = self.gate.as_ref().ok_or_else(|| {
                            Error::SchemaMismatch("gated mode needs a model built with gate parameters".into())
                        })?;
                        let gin = tape.concat(&[enc.node, h_prev]);
                        let a = self.linear(tape, gin, gp.w1, gp.b1);
                        let a = tape.relu(a);
                        let pre = self.linear(tape, a, gp.w2, gp.b2);
                        tape.sigmoid(pre)
                    }
                };
                (tape.mul(g, h_prev), Some(g))
            }
        };
        let z = tape.concat(&[enc.node, carried]);
        let h_next = self.gnn_core_ids(tape, z, enc.edge, enc.graph, n);
        if let Some(x) = tape.value(h_next).iter().find(|x| !x.is_finite()) {
            return Err(Error::NumericalError(format!("processor produced {x}")));
        }
        Ok(StepIds { z, gate: gate_id, carried, h_next })
    }

    fn decode_ids(
        &self,
        tape: &mut Tape,
        dec: &DecoderParams,
        u: Id,
        enc: EncIds,
        n: usize,
    ) -> Id {
        match *dec {
            DecoderParams::Node { w, b } => self.linear(tape, u, w, b),
            DecoderParams::NodePointer { w1, w2, w3, w4, b } => {
                let p1 = self.project(tape, u, w1);
                let p2 = self.project(tape, u, w2);
                let p3 = self.project(tape, enc.edge, w3);
                let src = tape.expand_i(p1, n);
                let dst = tape.expand_j(p2, n);
                let dst = tape.add(dst, p3);
                let m = tape.max2(src, dst);
                let logits = self.linear(tape, m, w4, b);
                tape.reshape(logits, n, n)
            }
            DecoderParams::Edge { w1, w2, w3, b } => {
                let a = self.project(tape, u, w1);
                let c = self.project(tape, u, w2);
                let ai = tape.expand_i(a, n);
                let cj = tape.expand_j(c, n);
                let s = tape.add(ai, cj);
                let e = self.linear(tape, enc.edge, w3, b);
                tape.add(s, e)
            }
            DecoderParams::EdgePointer { w1, w2, w3, w4, w5 } => {
                let a = self.project(tape, u, w1);
                let c = self.project(tape, u, w2);
                let ai = tape.expand_i(a, n);
                let cj = tape.expand_j(c, n);
                let s = tape.add(ai, cj);
                let e = self.project(tape, enc.edge, w3);
                let s = tape.add(s, e);
                let r = self.project(tape, u, w4);
                let logits = tape.matmul_t(s, r);
                let bias = self.project(tape, enc.edge, w5);
                tape.add_edge_ptr_bias(logits, bias, n)
            }
            DecoderParams::Graph { w, wg, b } => {
                let pooled = tape.max_rows(u);
                let a = self.linear(tape, pooled, w, b);
                let c = self.project(tape, enc.graph, wg);
                tape.add(a, c)
            }
        }
    }

    fn decode_stage(
        &self,
        tape: &mut Tape,
        task: &TaskParams,
        stage: Stage,
        h: Id,
        enc: EncIds,
        n: usize,
    ) -> BTreeMap<String, Id> {
        let u = tape.concat(&[enc.node, h]);
        task.decoder(stage)
            .map(|(spec, dec)| (spec.name.clone(), self.decode_ids(tape, dec, u, enc, n)))
            .collect()
    }

    /// Builds the full unrolled forward pass of a trajectory on `tape`.
    pub(crate) fn unroll(&self, tape: &mut Tape, traj: &Trajectory, opts: &ForwardOptions) -> Result<Unrolled> {
        let algo = traj.algorithm();
        let task = self.task(algo)?;
        let n = traj.n();
        let t_len = traj.len();
        if t_len == 0 {
            return Err(Error::SchemaMismatch("trajectory has no hints".into()));
        }
        let mode = opts.mode.unwrap_or(self.config.history_mode);
        let steps = t_len.saturating_sub(1).max(1);
        let inputs = self.ground_truth_leaves(tape, task, Stage::Input, &traj.instance.inputs, n)?;
        let input_enc = self.encode_group(tape, task, Stage::Input, &inputs)?;
        let mut hints = self.ground_truth_leaves(tape, task, Stage::Hint, &traj.hints[0], n)?;
        let mut h = tape.zeros(n, self.hidden_dim());
        let mut out = Unrolled { enc: vec![], steps: vec![], hint_preds: vec![], output_preds: BTreeMap::new() };
        for t in 1..=steps {
            let hint_enc = self.encode_group(tape, task, Stage::Hint, &hints)?;
            let enc = self.combine(tape, input_enc, hint_enc, n);
            let rec = self.processor_step_ids(tape, enc, h, n, mode, opts.gate)?;
            h = rec.h_next;
            if t_len >= 2 {
                let preds = self.decode_stage(tape, task, Stage::Hint, h, enc, n);
                hints = task
                    .schema
                    .stage(Stage::Hint)
                    .map(|spec| (spec.name.clone(), features::soft_input(tape, spec, preds[&spec.name], n)))
                    .collect();
                out.hint_preds.push(preds);
            }
            if t == steps {
                out.output_preds = self.decode_stage(tape, task, Stage::Output, h, enc, n);
            }
            out.enc.push(enc);
            out.steps.push(rec);
            if let Some(hook) = opts.carry {
                if t < steps {
                    let mut v = tape.value(h).clone();
                    hook(t, &mut v);
                    h = tape.leaf(v);
                }
            }
        }
        Ok(out)
    }

    // ---- detached API ----

    /// Encodes a full feature map (inputs and hints of one step).
    pub fn encode(&self, algo: AlgorithmId, features: &FeatureMap, n: usize) -> Result<EncodedStep> {
        let task = self.task(algo)?;
        let mut tape = Tape::new(&self.params);
        let inputs = self.ground_truth_leaves(&mut tape, task, Stage::Input, features, n)?;
        let hints = self.ground_truth_leaves(&mut tape, task, Stage::Hint, features, n)?;
        let a = self.encode_group(&mut tape, task, Stage::Input, &inputs)?;
        let b = self.encode_group(&mut tape, task, Stage::Hint, &hints)?;
        let e = self.combine(&mut tape, a, b, n);
        Ok(EncodedStep {
            node_emb: tape.value(e.node).clone(),
            edge_emb: tape.value(e.edge).clone(),
            graph_emb: tape.value(e.graph).clone(),
        })
    }

    fn check_encoded(&self, enc: &EncodedStep, n: usize) -> Result<()> {
        let h = self.hidden_dim();
        if enc.node_emb.dim() != (n, h) || enc.edge_emb.dim() != (n * n, h) || enc.graph_emb.dim() != (1, h) {
            return Err(Error::SchemaMismatch(format!("encoded step does not match n={n}, hidden={h}")));
        }
        Ok(())
    }

    fn enc_leaves(&self, tape: &mut Tape, enc: &EncodedStep) -> EncIds {
        EncIds {
            node: tape.leaf(enc.node_emb.clone()),
            edge: tape.leaf(enc.edge_emb.clone()),
            graph: tape.leaf(enc.graph_emb.clone()),
        }
    }

    /// One history-mode processor step.
    pub fn processor_step(
        &self,
        enc: &EncodedStep,
        h_prev: &LatentState,
        mode: HistoryMode,
        gate: GateOverride,
    ) -> Result<ProcessorStepRecord> {
        let n = enc.node_emb.nrows();
        self.check_encoded(enc, n)?;
        if h_prev.h.dim() != (n, self.hidden_dim()) {
            return Err(Error::SchemaMismatch(format!("latent state shape {:?}", h_prev.h.dim())));
        }
        let mut tape = Tape::new(&self.params);
        let e = self.enc_leaves(&mut tape, enc);
        let h = tape.leaf(h_prev.h.clone());
        let s = self.processor_step_ids(&mut tape, e, h, n, mode, gate)?;
        Ok(self.record(&tape, s))
    }

    fn record(&self, tape: &Tape, s: StepIds) -> ProcessorStepRecord {
        ProcessorStepRecord {
            z: tape.value(s.z).clone(),
            gate_values: s.gate.map(|g| tape.value(g).clone()),
            carried: tape.value(s.carried).clone(),
            h_next: LatentState { h: tape.value(s.h_next).clone() },
        }
    }

    /// The message-passing core on an explicit processor input.
    pub fn gnn_core(&self, z: &Array2<f64>, edge: &Array2<f64>, graph: &Array2<f64>) -> Result<LatentState> {
        let n = z.nrows();
        let h = self.hidden_dim();
        if z.dim() != (n, 2 * h) || edge.dim() != (n * n, h) || graph.dim() != (1, h) {
            return Err(Error::SchemaMismatch("gnn_core input shapes".into()));
        }
        let mut tape = Tape::new(&self.params);
        let (zi, ei, gi) = (tape.leaf(z.clone()), tape.leaf(edge.clone()), tape.leaf(graph.clone()));
        let out = self.gnn_core_ids(&mut tape, zi, ei, gi, n);
        let v = tape.value(out).clone();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalError("gnn_core overflow".into()));
        }
        Ok(LatentState { h: v })
    }

    /// Decodes every hint and output feature from a latent state.
    pub fn decode(&self, algo: AlgorithmId, h: &LatentState, enc: &EncodedStep) -> Result<PredictionSet> {
        let task = self.task(algo)?;
        let n = h.h.nrows();
        self.check_encoded(enc, n)?;
        let mut tape = Tape::new(&self.params);
        let e = self.enc_leaves(&mut tape, enc);
        let hid = tape.leaf(h.h.clone());
        let mut ids = self.decode_stage(&mut tape, task, Stage::Hint, hid, e, n);
        ids.extend(self.decode_stage(&mut tape, task, Stage::Output, hid, e, n));
        Ok(ids.into_iter().map(|(k, id)| (k, tape.value(id).clone())).collect())
    }

    /// Runs the model over a trajectory without teacher forcing.
    pub fn forward_trajectory(&self, traj: &Trajectory, opts: &ForwardOptions) -> Result<ForwardResult> {
        let mut tape = Tape::new(&self.params);
        let u = self.unroll(&mut tape, traj, opts)?;
        let grab = |m: &BTreeMap<String, Id>| -> PredictionSet {
            m.iter().map(|(k, &id)| (k.clone(), tape.value(id).clone())).collect()
        };
        Ok(ForwardResult {
            hint_predictions: u.hint_preds.iter().map(grab).collect(),
            output_predictions: grab(&u.output_preds),
            records: u.steps.iter().map(|&s| self.record(&tape, s)).collect(),
        })
    }

    /// Output feature specs of an algorithm, in schema order.
    pub fn output_specs(&self, algo: AlgorithmId) -> Result<Vec<FeatureSpec>> {
        Ok(self.task(algo)?.schema.stage(Stage::Output).cloned().collect())
    }
}

#[cfg(test)]
mod tests;
