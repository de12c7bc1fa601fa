//! Seeded synthetic attributed graphs for tests, benchmarks and demos.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::graph::{FeatureMatrix, GraphError, LabelVector, SparseGraph, SplitSpec};

/// Planted-partition graph with bag-of-words features. Node `i` belongs to
/// class `i % num_classes`; each class owns a contiguous block of the
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub num_features: usize,
    /// Distinct undirected edges, self-loops not counted.
    pub num_edges: usize,
    /// Probability that an edge stays inside a class.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability that a word comes from the node's own class block.
    pub class_signal: f64,
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 300,
            num_classes: 3,
            num_features: 60,
            num_edges: 600,
            homophily: 0.8,
            words_per_node: 8,
            class_signal: 0.6,
            train_per_class: 10,
            num_val: 30,
            num_test: 100,
            seed: 0,
        }
    }
}

/// Exactly `num_edges` distinct undirected pairs drawn uniformly.
pub fn random_edges(
    num_nodes: usize,
    num_edges: usize,
    seed: u64,
) -> Result<SparseGraph, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = num_nodes * num_nodes.saturating_sub(1) / 2;
    let target = num_edges.min(max);
    let mut seen = HashSet::with_capacity(target);
    while seen.len() < target {
        let a = rng.gen_range(0..num_nodes);
        let b = rng.gen_range(0..num_nodes);
        if a != b {
            seen.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<_> = seen.into_iter().collect();
    edges.sort_unstable();
    SparseGraph::from_edges(num_nodes, &edges)
}

pub fn planted_partition(spec: &SyntheticSpec) -> Result<Dataset, GraphError> {
    let SyntheticSpec {
        num_nodes: n,
        num_classes: c,
        num_features: f,
        ..
    } = *spec;
    if n == 0 || c == 0 || f < c || n < c {
        return Err(GraphError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_of = |i: usize| i % c;
    let members: Vec<Vec<usize>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();

    let max_edges = n * (n - 1) / 2;
    let target = spec.num_edges.min(max_edges);
    let mut seen = HashSet::with_capacity(target);
    let mut attempts = 0usize;
    while seen.len() < target && attempts < 100 * target + 1000 {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = if rng.gen_bool(spec.homophily) {
            *members[class_of(a)]
                .choose(&mut rng)
                .expect("nonempty class")
        } else {
            rng.gen_range(0..n)
        };
        if a != b {
            seen.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<_> = seen.into_iter().collect();
    edges.sort_unstable();
    let graph = SparseGraph::from_edges(n, &edges)?;

    let block = f / c;
    let mut x = Array2::zeros((f, n));
    for i in 0..n {
        let start = class_of(i) * block;
        for _ in 0..spec.words_per_node {
            let word = if rng.gen_bool(spec.class_signal) {
                start + rng.gen_range(0..block)
            } else {
                rng.gen_range(0..f)
            };
            x[[word, i]] = 1.0;
        }
    }
    let features = FeatureMatrix::new(x)?;
    let labels = LabelVector::new((0..n).map(class_of).collect(), c)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut per_class = vec![0; c];
    let mut train_ids = Vec::new();
    let mut rest = Vec::new();
    for i in order {
        if per_class[class_of(i)] < spec.train_per_class {
            per_class[class_of(i)] += 1;
            train_ids.push(i);
        } else {
            rest.push(i);
        }
    }
    let val_end = spec.num_val.min(rest.len());
    let test_end = (val_end + spec.num_test).min(rest.len());
    let val_ids = rest[..val_end].to_vec();
    let test_ids = rest[val_end..test_end].to_vec();
    let split = SplitSpec::new(train_ids, val_ids, test_ids, n)?;
    Ok(Dataset {
        name: Some("synthetic".into()),
        graph,
        features,
        labels,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_edge_count() {
        let g = random_edges(50, 200, 1).unwrap();
        assert_eq!(g.num_edges(), 200);
        assert_eq!(g.nnz(), 450);
    }

    #[test]
    fn planted_partition_shapes() {
        let spec = SyntheticSpec::default();
        let d = planted_partition(&spec).unwrap();
        assert_eq!(d.num_nodes(), 300);
        assert_eq!(d.graph.num_edges(), 600);
        assert_eq!(d.features.num_features(), 60);
        assert_eq!(d.split.train_ids.len(), 30);
        assert_eq!((d.split.val_ids.len(), d.split.test_ids.len()), (30, 100));
        assert_eq!(planted_partition(&spec).unwrap().graph, d.graph);
    }
}
