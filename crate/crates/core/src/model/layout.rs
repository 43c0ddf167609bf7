//! Parameter layout: which named tensors exist for a schema and config, and
//! how they are initialised.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::params::{xavier, ParamStore};
use crate::error::Result;
use crate::traces::{AlgorithmId, FeatureSpec, FeatureType, Location, Schema, Stage};

/// Width of the per-triplet feature vector before projection.
pub const TRIPLET_DIM: usize = 8;

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        let w = xavier(rows, cols, self.rng);
        self.store.insert(name, w)
    }

    fn fill(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<usize> {
        self.store.insert(name, Array2::from_elem((rows, cols), v))
    }
}

pub(crate) struct TripletParams {
    pub t_i: usize,
    pub t_j: usize,
    pub t_k: usize,
    pub t_e1: usize,
    pub t_e2: usize,
    pub t_e3: usize,
    pub t_g: usize,
    pub b_t: usize,
    pub w_t: usize,
    pub b_to: usize,
}

pub(crate) struct ProcessorParams {
    pub w_dst: usize,
    pub w_src: usize,
    pub w_e: usize,
    pub w_g: usize,
    pub b_m1: usize,
    pub w_m2: usize,
    pub b_m2: usize,
    pub triplet: Option<TripletParams>,
    pub w_o1: usize,
    pub w_o2: usize,
    pub b_o: usize,
    pub gamma: usize,
    pub beta: usize,
}

impl ProcessorParams {
    pub fn build(init: &mut Init, h: usize, triplets: bool) -> Result<Self> {
        let p = |s: &str| format!("processor/{s}");
        let w_dst = init.weight(&p("w_dst"), 2 * h, h)?;
        let w_src = init.weight(&p("w_src"), 2 * h, h)?;
        let w_e = init.weight(&p("w_e"), h, h)?;
        let w_g = init.weight(&p("w_g"), h, h)?;
        let b_m1 = init.fill(&p("b_m1"), 1, h, 0.0)?;
        let w_m2 = init.weight(&p("w_m2"), h, h)?;
        let b_m2 = init.fill(&p("b_m2"), 1, h, 0.0)?;
        let triplet = if triplets {
            let d = TRIPLET_DIM;
            Some(TripletParams {
                t_i: init.weight(&p("t_i"), 2 * h, d)?,
                t_j: init.weight(&p("t_j"), 2 * h, d)?,
                t_k: init.weight(&p("t_k"), 2 * h, d)?,
                t_e1: init.weight(&p("t_e1"), h, d)?,
                t_e2: init.weight(&p("t_e2"), h, d)?,
                t_e3: init.weight(&p("t_e3"), h, d)?,
                t_g: init.weight(&p("t_g"), h, d)?,
                b_t: init.fill(&p("b_t"), 1, d, 0.0)?,
                w_t: init.weight(&p("w_t"), d, h)?,
                b_to: init.fill(&p("b_to"), 1, h, 0.0)?,
            })
        } else {
            None
        };
        Ok(Self {
            w_dst,
            w_src,
            w_e,
            w_g,
            b_m1,
            w_m2,
            b_m2,
            triplet,
            w_o1: init.weight(&p("w_o1"), 2 * h, h)?,
            w_o2: init.weight(&p("w_o2"), h, h)?,
            b_o: init.fill(&p("b_o"), 1, h, 0.0)?,
            gamma: init.fill(&p("ln_gamma"), 1, h, 1.0)?,
            beta: init.fill(&p("ln_beta"), 1, h, 0.0)?,
        })
    }

    pub fn ids(&self) -> Vec<usize> {
        let mut v = vec![self.w_dst, self.w_src, self.w_e, self.w_g, self.b_m1, self.w_m2, self.b_m2];
        if let Some(t) = &self.triplet {
            v.extend([t.t_i, t.t_j, t.t_k, t.t_e1, t.t_e2, t.t_e3, t.t_g, t.b_t, t.w_t, t.b_to]);
        }
        v.extend([self.w_o1, self.w_o2, self.b_o, self.gamma, self.beta]);
        v
    }
}

/// Final-layer gate bias at initialisation.
pub const GATE_BIAS_INIT: f64 = -1.0;

pub(crate) struct GateParams {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl GateParams {
    pub fn build(init: &mut Init, h: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w1: init.weight("gate/w1", 2 * h, hidden)?,
            b1: init.fill("gate/b1", 1, hidden, 0.0)?,
            w2: init.weight("gate/w2", hidden, h)?,
            b2: init.fill("gate/b2", 1, h, GATE_BIAS_INIT)?,
        })
    }

    pub fn ids(&self) -> Vec<usize> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

/// Where a feature's encoding lands and how many raw columns it has.
pub(crate) fn encoder_shape(spec: &FeatureSpec) -> (Location, usize) {
    match (spec.kind, spec.location) {
        (FeatureType::Pointer, Location::Node) => (Location::Edge, 1),
        (FeatureType::Pointer, _) => (Location::Edge, 2),
        (FeatureType::Categorical, loc) => (loc, spec.num_classes.unwrap_or(1)),
        (_, loc) => (loc, 1),
    }
}

pub(crate) struct EncoderParams {
    pub spec: FeatureSpec,
    pub target: Location,
    pub w: usize,
    pub b: usize,
}

pub(crate) enum DecoderParams {
    /// Node features other than pointers: `u·w + b`.
    Node { w: usize, b: usize },
    /// `w4 · max(u_i w1, u_j w2 + ē_ij w3) + b`.
    NodePointer { w1: usize, w2: usize, w3: usize, w4: usize, b: usize },
    /// `u_i w1 + u_j w2 + ē_ij w3 + b`.
    Edge { w1: usize, w2: usize, w3: usize, b: usize },
    /// `(u_i w1 + u_j w2 + ē_ij w3) · (u_k w4) + ē_kj w5`.
    EdgePointer { w1: usize, w2: usize, w3: usize, w4: usize, w5: usize },
    /// `max_i(u_i) w + ḡ wg + b`.
    Graph { w: usize, wg: usize, b: usize },
}

impl DecoderParams {
    fn ids(&self) -> Vec<usize> {
        match *self {
            DecoderParams::Node { w, b } => vec![w, b],
            DecoderParams::NodePointer { w1, w2, w3, w4, b } => vec![w1, w2, w3, w4, b],
            DecoderParams::Edge { w1, w2, w3, b } => vec![w1, w2, w3, b],
            DecoderParams::EdgePointer { w1, w2, w3, w4, w5 } => vec![w1, w2, w3, w4, w5],
            DecoderParams::Graph { w, wg, b } => vec![w, wg, b],
        }
    }
}

pub(crate) struct TaskParams {
    pub schema: Schema,
    pub encoders: Vec<EncoderParams>,
    pub decoders: Vec<(FeatureSpec, DecoderParams)>,
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Input => "input",
        Stage::Hint => "hint",
        Stage::Output => "output",
    }
}

impl TaskParams {
    pub fn build(init: &mut Init, algo: AlgorithmId, h: usize) -> Result<Self> {
        let schema = algo.schema();
        let mut encoders = Vec::new();
        for spec in schema.specs().iter().filter(|s| s.stage != Stage::Output) {
            let base = format!("{}/encode/{}/{}", algo.name(), stage_name(spec.stage), spec.name);
            let (target, width) = encoder_shape(spec);
            encoders.push(EncoderParams {
                spec: spec.clone(),
                target,
                w: init.weight(&format!("{base}/w"), width, h)?,
                b: init.fill(&format!("{base}/b"), 1, h, 0.0)?,
            });
        }
        let mut decoders = Vec::new();
        for spec in schema.specs().iter().filter(|s| s.stage != Stage::Input) {
            let base = format!("{}/decode/{}/{}", algo.name(), stage_name(spec.stage), spec.name);
            let name = |s: &str| format!("{base}/{s}");
            let k = spec.num_classes.unwrap_or(1);
            let dec = match (spec.location, spec.kind) {
                (Location::Node, FeatureType::Pointer) => DecoderParams::NodePointer {
                    w1: init.weight(&name("w1"), 2 * h, h)?,
                    w2: init.weight(&name("w2"), 2 * h, h)?,
                    w3: init.weight(&name("w3"), h, h)?,
                    w4: init.weight(&name("w4"), h, 1)?,
                    b: init.fill(&name("b"), 1, 1, 0.0)?,
                },
                (Location::Node, _) => DecoderParams::Node {
                    w: init.weight(&name("w"), 2 * h, k)?,
                    b: init.fill(&name("b"), 1, k, 0.0)?,
                },
                (Location::Edge, FeatureType::Pointer) => DecoderParams::EdgePointer {
                    w1: init.weight(&name("w1"), 2 * h, h)?,
                    w2: init.weight(&name("w2"), 2 * h, h)?,
                    w3: init.weight(&name("w3"), h, h)?,
                    w4: init.weight(&name("w4"), 2 * h, h)?,
                    w5: init.weight(&name("w5"), h, 1)?,
                },
                (Location::Edge, _) => DecoderParams::Edge {
                    w1: init.weight(&name("w1"), 2 * h, k)?,
                    w2: init.weight(&name("w2"), 2 * h, k)?,
                    w3: init.weight(&name("w3"), h, k)?,
                    b: init.fill(&name("b"), 1, k, 0.0)?,
                },
                (Location::Graph, _) => DecoderParams::Graph {
                    w: init.weight(&name("w"), 2 * h, k)?,
                    wg: init.weight(&name("wg"), h, k)?,
                    b: init.fill(&name("b"), 1, k, 0.0)?,
                },
            };
            decoders.push((spec.clone(), dec));
        }
        Ok(Self { schema, encoders, decoders })
    }

    pub fn ids(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.encoders.iter().flat_map(|e| [e.w, e.b]).collect();
        for (_, d) in &self.decoders {
            v.extend(d.ids());
        }
        v
    }

    pub fn decoder(&self, stage: Stage) -> impl Iterator<Item = &(FeatureSpec, DecoderParams)> {
        self.decoders.iter().filter(move |(s, _)| s.stage == stage)
    }
}
