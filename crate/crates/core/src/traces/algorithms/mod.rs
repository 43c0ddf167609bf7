mod graphs;
mod greedy;
mod search;
mod sorting;

use rand_chacha::ChaCha8Rng;

use super::{AlgorithmId, FeatureMap, Recorder, Schema};
use crate::error::Result;

pub(crate) trait Algorithm: Sync {
    fn schema(&self) -> Schema;

    fn min_nodes(&self) -> usize {
        1
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> FeatureMap;

    /// Runs the algorithm, pushing hints into `rec`; returns the outputs.
    fn execute(&self, n: usize, inputs: &FeatureMap, rec: &mut Recorder) -> Result<FeatureMap>;

    fn step(&self, n: usize, inputs: &FeatureMap, hint: &FeatureMap) -> Result<FeatureMap>;

    fn brute_force(&self, n: usize, inputs: &FeatureMap) -> Result<FeatureMap>;
}

pub(crate) fn lookup(id: AlgorithmId) -> &'static dyn Algorithm {
    match id {
        AlgorithmId::InsertionSort => &sorting::InsertionSort,
        AlgorithmId::BubbleSort => &sorting::BubbleSort,
        AlgorithmId::Minimum => &search::Minimum,
        AlgorithmId::BinarySearch => &search::BinarySearch,
        AlgorithmId::Bfs => &graphs::Bfs,
        AlgorithmId::BellmanFord => &graphs::BellmanFord,
        AlgorithmId::FloydWarshall => &graphs::FloydWarshall,
        AlgorithmId::ActivitySelector => &greedy::ActivitySelector,
    }
}
