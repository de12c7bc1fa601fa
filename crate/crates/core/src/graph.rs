//! Sparse graph and node-attribute containers.
//!
//! Adjacency is kept in CSR form, symmetric and unweighted, with every node
//! listed in its own neighborhood. Edge-aligned tensors in [`crate::tensor`]
//! follow the order of `col_indices` exactly, so entry `e` of such a tensor
//! belongs to the pair `(row_of(e), col_indices[e])`.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },
    #[error("graph must contain at least one node")]
    Empty,
    #[error("keep set is empty")]
    EmptyKeepSet,
    #[error("feature matrix has {found} columns but graph has {expected} nodes")]
    FeatureShape { expected: usize, found: usize },
    #[error("non-finite feature value at feature {feature}, node {node}")]
    NonFiniteFeature { feature: usize, node: usize },
    #[error("label {label} of node {node} not in [0, {num_classes})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("class {0} has no labelled node")]
    MissingClass(usize),
    #[error("split sets overlap at node {0}")]
    OverlappingSplit(usize),
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),
}

/// Symmetric, unweighted adjacency with enforced self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    // row of every stored entry, cached for edge-parallel kernels
    row_indices: Vec<usize>,
    mirrors: Vec<usize>,
}

impl SparseGraph {
    /// Builds the graph from an undirected edge list. Either orientation is
    /// accepted; duplicates and explicit self-loops collapse.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut neighbors: Vec<BTreeSet<usize>> =
            (0..num_nodes).map(|i| BTreeSet::from([i])).collect();
        for &(a, b) in edges {
            for index in [a, b] {
                if index >= num_nodes {
                    return Err(GraphError::NodeOutOfRange { index, num_nodes });
                }
            }
            neighbors[a].insert(b);
            neighbors[b].insert(a);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for set in &neighbors {
            col_indices.extend(set.iter().copied());
            row_offsets.push(col_indices.len());
        }
        Ok(Self::from_parts_unchecked(
            num_nodes,
            row_offsets,
            col_indices,
        ))
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_csr(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Empty);
        }
        if row_offsets.len() != num_nodes + 1
            || row_offsets[0] != 0
            || row_offsets[num_nodes] != col_indices.len()
        {
            return Err(GraphError::InvalidCsr(
                "row offsets do not cover the column array".into(),
            ));
        }
        for i in 0..num_nodes {
            let (start, end) = (row_offsets[i], row_offsets[i + 1]);
            if start > end {
                return Err(GraphError::InvalidCsr(format!(
                    "row {i} has negative length"
                )));
            }
            let row = &col_indices[start..end];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::InvalidCsr(format!(
                    "row {i} is not strictly increasing"
                )));
            }
            if let Some(&j) = row.iter().find(|&&j| j >= num_nodes) {
                return Err(GraphError::NodeOutOfRange {
                    index: j,
                    num_nodes,
                });
            }
            if row.binary_search(&i).is_err() {
                return Err(GraphError::InvalidCsr(format!(
                    "row {i} lacks its self-loop"
                )));
            }
        }
        let graph = Self::from_parts_unchecked(num_nodes, row_offsets, col_indices);
        for i in 0..num_nodes {
            for &j in graph.neighbors(i) {
                if !graph.contains_edge(j, i) {
                    return Err(GraphError::InvalidCsr(format!(
                        "entry ({i}, {j}) has no mirror"
                    )));
                }
            }
        }
        Ok(graph)
    }

    fn from_parts_unchecked(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
    ) -> Self {
        let mut row_indices = Vec::with_capacity(col_indices.len());
        for i in 0..num_nodes {
            row_indices.extend(std::iter::repeat_n(i, row_offsets[i + 1] - row_offsets[i]));
        }
        let mut cursor = row_offsets[..num_nodes].to_vec();
        let mirrors = col_indices
            .iter()
            .map(|&j| {
                cursor[j] += 1;
                cursor[j] - 1
            })
            .collect();
        Self {
            num_nodes,
            row_offsets,
            col_indices,
            row_indices,
            mirrors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored entries, self-loops included (`N + 2E`).
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of undirected edges between distinct nodes.
    pub fn num_edges(&self) -> usize {
        (self.nnz() - self.num_nodes) / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Source node of every stored entry, aligned with [`Self::col_indices`].
    pub fn row_indices(&self) -> &[usize] {
        &self.row_indices
    }

    /// Position of the stored entry `(j, i)` for every stored `(i, j)`.
    pub fn mirror_indices(&self) -> &[usize] {
        &self.mirrors
    }

    /// Neighborhood of `i`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Range of stored-entry positions belonging to row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Neighborhood size `|N_i|`, counting the self-loop.
    pub fn degree(&self, i: usize) -> Result<usize, GraphError> {
        if i >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange {
                index: i,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self.row_offsets[i + 1] - self.row_offsets[i])
    }

    /// Average neighborhood size including self-loops, `nnz / N`.
    pub fn mean_neighborhood_size(&self) -> f64 {
        self.nnz() as f64 / self.num_nodes as f64
    }

    /// Average number of distinct neighbors per node, `2E / N`.
    pub fn mean_degree(&self) -> f64 {
        2.0 * self.num_edges() as f64 / self.num_nodes as f64
    }

    /// Undirected edges per node, `E / N`. Citation benchmarks are often
    /// summarised with this figure.
    pub fn edges_per_node(&self) -> f64 {
        self.num_edges() as f64 / self.num_nodes as f64
    }

    /// Undirected edges `(i, j)` with `i < j`, in CSR order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|i| {
                self.neighbors(i)
                    .iter()
                    .filter(move |&&j| j > i)
                    .map(move |&j| (i, j))
            })
            .collect()
    }
}

/// Dense `F × N` attribute matrix; column `i` holds the features of node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, GraphError> {
        if let Some(((feature, node), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GraphError::NonFiniteFeature { feature, node });
        }
        Ok(Self { values })
    }

    pub fn num_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn check_matches(&self, graph: &SparseGraph) -> Result<(), GraphError> {
        if self.num_nodes() != graph.num_nodes() {
            return Err(GraphError::FeatureShape {
                expected: graph.num_nodes(),
                found: self.num_nodes(),
            });
        }
        Ok(())
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        let nonzero = self.values.iter().filter(|v| **v != 0.0).count();
        nonzero as f64 / self.values.len().max(1) as f64
    }

    /// Columns restricted to `nodes`, in the given order.
    pub fn select_nodes(&self, nodes: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(1), nodes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self, GraphError> {
        let mut seen = vec![false; num_classes];
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label,
                    num_classes,
                });
            }
            seen[label] = true;
        }
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(GraphError::MissingClass(class));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl SplitSpec {
    pub fn new(
        train_ids: Vec<usize>,
        val_ids: Vec<usize>,
        test_ids: Vec<usize>,
        num_nodes: usize,
    ) -> Result<Self, GraphError> {
        let mut seen = vec![false; num_nodes];
        for &id in train_ids.iter().chain(&val_ids).chain(&test_ids) {
            if id >= num_nodes {
                return Err(GraphError::NodeOutOfRange {
                    index: id,
                    num_nodes,
                });
            }
            if seen[id] {
                return Err(GraphError::OverlappingSplit(id));
            }
            seen[id] = true;
        }
        Ok(Self {
            train_ids,
            val_ids,
            test_ids,
        })
    }

    /// Checks the 20-per-class / 500 / 1000 benchmark convention.
    pub fn is_benchmark_sized(&self, num_classes: usize) -> bool {
        self.train_ids.len() == 20 * num_classes
            && self.val_ids.len() == 500
            && self.test_ids.len() == 1000
    }
}

/// Result of [`induce_subgraph`]: `original_ids[new] = old`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedSubgraph {
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub original_ids: Vec<usize>,
}

impl InducedSubgraph {
    /// Position of an original node in the subgraph, if it was kept.
    pub fn new_id(&self, original: usize) -> Option<usize> {
        self.original_ids.binary_search(&original).ok()
    }
}

/// Restricts the graph and features to `keep`. Kept nodes are renumbered in
/// increasing original order; only edges with both endpoints kept survive.
pub fn induce_subgraph(
    graph: &SparseGraph,
    features: &FeatureMatrix,
    keep: &[usize],
) -> Result<InducedSubgraph, GraphError> {
    features.check_matches(graph)?;
    let n = graph.num_nodes();
    let mut original_ids: Vec<usize> = keep.to_vec();
    original_ids.sort_unstable();
    original_ids.dedup();
    if original_ids.is_empty() {
        return Err(GraphError::EmptyKeepSet);
    }
    if let Some(&bad) = original_ids.iter().find(|&&i| i >= n) {
        return Err(GraphError::NodeOutOfRange {
            index: bad,
            num_nodes: n,
        });
    }
    let mut new_id = vec![usize::MAX; n];
    for (new, &old) in original_ids.iter().enumerate() {
        new_id[old] = new;
    }
    // Kept rows stay sorted because the renumbering is monotone.
    let mut row_offsets = Vec::with_capacity(original_ids.len() + 1);
    let mut col_indices = Vec::new();
    row_offsets.push(0);
    for &old in &original_ids {
        col_indices.extend(graph.neighbors(old).iter().filter_map(|&j| {
            let mapped = new_id[j];
            (mapped != usize::MAX).then_some(mapped)
        }));
        row_offsets.push(col_indices.len());
    }
    let sub = SparseGraph::from_parts_unchecked(original_ids.len(), row_offsets, col_indices);
    Ok(InducedSubgraph {
        graph: sub,
        features: features.select_nodes(&original_ids),
        original_ids,
    })
}
