//! Global graph storage: directed edges in CSR form (both directions),
//! dense node features, integer labels, and deterministic splits.
//!
//! A [`GraphStore`] is immutable after construction and safe to share
//! across threads.

mod ingest;
mod synth;

pub use ingest::{
    ingest_graph, parse_edge_file, parse_feature_file, parse_label_file, write_dataset,
};
pub use synth::{synth_conflict_fixture, synth_graph, SyntheticKind, SyntheticSpec};

use crate::rng::{stream_rng, StreamKind};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("edge ({src}, {dst}) references unknown node id (num_nodes = {num_nodes})")]
    UnknownNode { src: usize, dst: usize, num_nodes: usize },
    #[error("feature row {row} has width {got}, expected {expected}")]
    InconsistentWidth { row: usize, got: usize, expected: usize },
    #[error("label {label} of node {node} out of class range [0, {num_classes})")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
    #[error("feature rows ({features}) and label count ({labels}) disagree")]
    CountMismatch { features: usize, labels: usize },
    #[error("split fractions must be nonnegative and sum to 1 (got {0:?})")]
    BadFractions((f64, f64, f64)),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix of node features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "feature data length mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Compressed sparse row adjacency: `targets[offsets[v]..offsets[v+1]]`
/// are the neighbors of `v`, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Csr {
    /// Builds from (src, dst) pairs; callers pass pre-dedup'd edges.
    fn from_edges(num_nodes: usize, edges: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut degree = vec![0usize; num_nodes];
        let pairs: Vec<(usize, usize)> = edges.collect();
        for &(s, _) in &pairs {
            degree[s] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for v in 0..num_nodes {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut targets = vec![0usize; pairs.len()];
        let mut cursor = offsets.clone();
        for &(s, d) in &pairs {
            targets[cursor[s]] = d;
            cursor[s] += 1;
        }
        for v in 0..num_nodes {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Reconstructs the edge pairs encoded by this CSR.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.targets.len());
        for v in 0..self.offsets.len() - 1 {
            for &t in self.neighbors(v) {
                out.push((v, t));
            }
        }
        out
    }
}

/// The global directed graph: deduplicated edge list, CSR adjacency in
/// both directions, node features, and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStore {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub out_csr: Csr,
    pub in_csr: Csr,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl GraphStore {
    /// Validates invariants, drops duplicate edges, and builds both CSRs.
    /// Self-loops present in the input are preserved.
    pub fn new(
        num_nodes: usize,
        mut edges: Vec<(usize, usize)>,
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        if features.rows != num_nodes {
            return Err(GraphError::CountMismatch {
                features: features.rows,
                labels: labels.len(),
            });
        }
        if labels.len() != num_nodes {
            return Err(GraphError::CountMismatch {
                features: features.rows,
                labels: labels.len(),
            });
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange { node, label, num_classes });
            }
        }
        for &(src, dst) in &edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(GraphError::UnknownNode { src, dst, num_nodes });
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let out_csr = Csr::from_edges(num_nodes, edges.iter().copied());
        let in_csr = Csr::from_edges(num_nodes, edges.iter().map(|&(s, d)| (d, s)));
        Ok(Self { num_nodes, edges, out_csr, in_csr, features, labels, num_classes })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols
    }
}

/// Disjoint train/validation/test node index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Shuffles node ids with a seeded stream and slices them by the given
/// fractions. Sizes are the floor allocation; remainder nodes go to train.
pub fn make_split(
    num_nodes: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, GraphError> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(GraphError::BadFractions(fractions));
    }
    let n_val = (num_nodes as f64 * fv).floor() as usize;
    let n_test = (num_nodes as f64 * fe).floor() as usize;
    let n_train = num_nodes - n_val - n_test;

    let mut ids: Vec<usize> = (0..num_nodes).collect();
    let mut rng = stream_rng(seed, StreamKind::Split, num_nodes as u64, 0);
    ids.shuffle(&mut rng);

    let train_idx = ids[..n_train].to_vec();
    let val_idx = ids[n_train..n_train + n_val].to_vec();
    let test_idx = ids[n_train + n_val..].to_vec();
    Ok(SplitAssignment { train_idx, val_idx, test_idx })
}
