//! Step-annotated execution traces of classical algorithms.
//!
//! Every algorithm is available through two independent routes:
//!
//! * [`run_algorithm`] executes the textbook loop and records a hint probe at
//!   each step;
//! * [`step_oracle`] reconstructs the next hint purely from the current hint
//!   and the inputs.
//!
//! Agreement of the two routes at every step is the Markov property of the
//! traces. [`brute_force_output`] is a third route that computes the final
//! outputs directly (exhaustive search, linear scans, path enumeration).
//!
//! Probe schemas (`pos` is the node position `i / n`, present everywhere):
//!
//! | algorithm          | inputs                  | hints                                   | outputs         |
//! |--------------------|-------------------------|-----------------------------------------|-----------------|
//! | insertion_sort     | key                     | pred_h (ptr), i, j (mask_one)           | pred (ptr)      |
//! | bubble_sort        | key                     | pred_h (ptr), i, j (mask_one)           | pred (ptr)      |
//! | minimum            | key                     | pred_h (ptr), min_h, i (mask_one)       | min (mask_one)  |
//! | binary_search      | key, target (graph)     | low, high, mid (mask_one), phase (graph categorical/3) | return (mask_one) |
//! | bfs                | s (mask_one), A (edge mask) | reach_h (mask), pi_h (ptr)          | pi (ptr)        |
//! | bellman_ford       | s, A (edge scalar), adj (edge mask) | pi_h (ptr), d (scalar), msk (mask) | pi (ptr) |
//! | floyd_warshall     | A (edge scalar), adj    | Pi_h (edge ptr), D (edge scalar), msk (edge mask), k (mask_one) | Pi (edge ptr) |
//! | activity_selector  | s, f                    | pred_h (ptr), selected_h (mask), m, k (mask_one) | selected (mask) |

mod algorithms;
mod probe;
pub mod sampling;
pub mod spec;
pub mod tensor;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use spec::{FeatureSpec, FeatureType, Location, Schema, Stage};
pub use tensor::{FeatureMap, Tensor};

use crate::error::{Error, Result};
use algorithms::Algorithm;

/// Largest instance the brute-force oracles accept.
pub const ORACLE_MAX_NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmId {
    InsertionSort,
    BubbleSort,
    Minimum,
    BinarySearch,
    Bfs,
    BellmanFord,
    FloydWarshall,
    ActivitySelector,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 8] = [
        AlgorithmId::InsertionSort,
        AlgorithmId::BubbleSort,
        AlgorithmId::Minimum,
        AlgorithmId::BinarySearch,
        AlgorithmId::Bfs,
        AlgorithmId::BellmanFord,
        AlgorithmId::FloydWarshall,
        AlgorithmId::ActivitySelector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmId::InsertionSort => "insertion_sort",
            AlgorithmId::BubbleSort => "bubble_sort",
            AlgorithmId::Minimum => "minimum",
            AlgorithmId::BinarySearch => "binary_search",
            AlgorithmId::Bfs => "bfs",
            AlgorithmId::BellmanFord => "bellman_ford",
            AlgorithmId::FloydWarshall => "floyd_warshall",
            AlgorithmId::ActivitySelector => "activity_selector",
        }
    }

    fn imp(self) -> &'static dyn Algorithm {
        algorithms::lookup(self)
    }

    pub fn schema(self) -> Schema {
        self.imp().schema()
    }

    pub fn min_nodes(self) -> usize {
        self.imp().min_nodes()
    }

    /// Upper bound on the number of hint steps for `n` nodes.
    pub fn max_hint_steps(self, n: usize) -> usize {
        (n * n).max(n + 1)
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub algorithm: AlgorithmId,
    pub n: usize,
    pub inputs: FeatureMap,
}

impl ProblemInstance {
    pub fn new(algorithm: AlgorithmId, n: usize, inputs: FeatureMap) -> Result<Self> {
        let inst = Self { algorithm, n, inputs };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < self.algorithm.min_nodes() {
            return Err(Error::InvalidSize {
                algorithm: self.algorithm.to_string(),
                n: self.n,
                min: self.algorithm.min_nodes(),
            });
        }
        check_stage(&self.algorithm.schema(), Stage::Input, &self.inputs, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance: ProblemInstance,
    pub hints: Vec<FeatureMap>,
    pub outputs: FeatureMap,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.instance.n
    }

    /// Number of hint time steps `T`.
    pub fn len(&self) -> usize {
        self.hints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }

    pub fn algorithm(&self) -> AlgorithmId {
        self.instance.algorithm
    }
}

/// Every probe of `stage` present exactly once with valid shape and domain.
fn check_stage(schema: &Schema, stage: Stage, map: &FeatureMap, n: usize) -> Result<()> {
    let mut expected = 0;
    for spec in schema.stage(stage) {
        expected += 1;
        let t = map.get(&spec.name).ok_or_else(|| {
            Error::SchemaMismatch(format!("missing {:?} probe `{}`", stage, spec.name))
        })?;
        t.check(spec, n)?;
    }
    if map.len() != expected {
        return Err(Error::SchemaMismatch(format!(
            "{:?} map has {} entries, schema declares {expected}",
            stage,
            map.len()
        )));
    }
    Ok(())
}

/// Samples a problem instance; deterministic in `(algorithm, n, seed)`.
pub fn sample_instance(algorithm: AlgorithmId, n: usize, seed: u64) -> Result<ProblemInstance> {
    let imp = algorithm.imp();
    if n < imp.min_nodes() {
        return Err(Error::InvalidSize {
            algorithm: algorithm.to_string(),
            n,
            min: imp.min_nodes(),
        });
    }
    let mut rng = sampling::rng_for(algorithm.name(), n, seed);
    let inputs = imp.sample(n, &mut rng);
    ProblemInstance::new(algorithm, n, inputs)
}

/// Collects hint probes and enforces the trace-length guard.
pub(crate) struct Recorder {
    algorithm: AlgorithmId,
    bound: usize,
    hints: Vec<FeatureMap>,
}

impl Recorder {
    fn new(algorithm: AlgorithmId, n: usize) -> Self {
        Self {
            algorithm,
            bound: algorithm.max_hint_steps(n),
            hints: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, hint: FeatureMap) -> Result<()> {
        if self.hints.len() >= self.bound {
            return Err(Error::TraceOverflow {
                algorithm: self.algorithm.to_string(),
                bound: self.bound,
            });
        }
        self.hints.push(hint);
        Ok(())
    }
}

/// Executes the algorithm, recording the hint time series and the outputs.
pub fn run_algorithm(instance: &ProblemInstance) -> Result<Trajectory> {
    instance.validate()?;
    let imp = instance.algorithm.imp();
    let mut rec = Recorder::new(instance.algorithm, instance.n);
    let outputs = imp.execute(instance.n, &instance.inputs, &mut rec)?;
    Ok(Trajectory {
        instance: instance.clone(),
        hints: rec.hints,
        outputs,
    })
}

/// Single-step ground truth: the hint state following `hint`.
/// Terminal states are fixpoints.
pub fn step_oracle(instance: &ProblemInstance, hint: &FeatureMap) -> Result<FeatureMap> {
    let schema = instance.algorithm.schema();
    check_stage(&schema, Stage::Hint, hint, instance.n)
        .map_err(|e| Error::InvalidHintState(e.to_string()))?;
    instance.algorithm.imp().step(instance.n, &instance.inputs, hint)
}

/// Outputs computed directly from the inputs, independent of the executor.
pub fn brute_force_output(instance: &ProblemInstance) -> Result<FeatureMap> {
    if instance.n > ORACLE_MAX_NODES {
        return Err(Error::OracleSizeExceeded {
            n: instance.n,
            max: ORACLE_MAX_NODES,
        });
    }
    instance.algorithm.imp().brute_force(instance.n, &instance.inputs)
}

/// Schema closure over a whole trajectory: every tensor matches exactly one
/// probe in shape and value domain.
pub fn validate_trajectory(traj: &Trajectory) -> Result<()> {
    traj.instance.validate()?;
    let schema = traj.algorithm().schema();
    if traj.hints.is_empty() {
        return Err(Error::SchemaMismatch("trajectory without hints".into()));
    }
    for hint in &traj.hints {
        check_stage(&schema, Stage::Hint, hint, traj.n())?;
    }
    check_stage(&schema, Stage::Output, &traj.outputs, traj.n())
}
