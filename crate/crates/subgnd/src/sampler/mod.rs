//! Induced-subgraph sampling via random walk with restart.
//!
//! The pipeline per seed node: collect nodes with an RWR walk, induce the
//! directed edges among them, convert those to bidirectional edges, then
//! relabel everything to local indices with the ego at 0. Dead-end seeds
//! (and egos left without an incident edge) get a self-loop so message
//! passing stays well-defined.

mod corpus;

pub use corpus::{parse_corpus, read_corpus, write_corpus, write_corpus_string};

use crate::graph::{FeatureMatrix, GraphStore};
use crate::rng::{stream_rng, StreamKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("seed node {node} out of range (num_nodes = {num_nodes})")]
    SeedOutOfRange { node: usize, num_nodes: usize },
    #[error("edge ({src}, {dst}) has an endpoint outside the sampled node set")]
    EdgeOutsideSet { src: usize, dst: usize },
    #[error("invalid walk config: {0}")]
    BadConfig(String),
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which adjacency the walker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkDirection {
    Out,
    In,
    Both,
}

impl std::str::FromStr for WalkDirection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "out" => Ok(WalkDirection::Out),
            "in" => Ok(WalkDirection::In),
            "both" => Ok(WalkDirection::Both),
            other => Err(format!("unknown direction {other:?} (expected out|in|both)")),
        }
    }
}

impl std::fmt::Display for WalkDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WalkDirection::Out => "out",
            WalkDirection::In => "in",
            WalkDirection::Both => "both",
        })
    }
}

/// Random-walk-with-restart parameters.
#[derive(Debug, Clone)]
pub struct WalkConfig {
    /// Per-step probability of jumping back to the seed.
    pub restart_probability: f64,
    /// Cap on distinct nodes collected per seed (the seed counts).
    pub rw_hops: usize,
    pub walk_direction: WalkDirection,
    /// Hard cap on walk steps; prevents low-degree traps from looping.
    pub max_steps: usize,
    pub seed: u64,
}

impl WalkConfig {
    pub fn new(rw_hops: usize, seed: u64) -> Self {
        Self {
            restart_probability: 0.8,
            rw_hops,
            walk_direction: WalkDirection::Out,
            max_steps: 16 * rw_hops,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(0.0..=1.0).contains(&self.restart_probability) {
            return Err(SamplerError::BadConfig("restart_probability must lie in [0, 1]".into()));
        }
        if self.rw_hops < 1 {
            return Err(SamplerError::BadConfig("rw_hops must be >= 1".into()));
        }
        if self.max_steps < self.rw_hops {
            return Err(SamplerError::BadConfig("max_steps must be >= rw_hops".into()));
        }
        Ok(())
    }
}

/// An anonymized per-node sample. Local index = first-visit order, so the
/// ego is always local index 0. Edges are bidirectionalized local pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedSubgraph {
    pub orig_ids: Vec<usize>,
    pub local_edges: Vec<(usize, usize)>,
    pub features: FeatureMatrix,
    pub label: usize,
    pub ego_local: usize,
}

impl InducedSubgraph {
    pub fn num_nodes(&self) -> usize {
        self.orig_ids.len()
    }

    /// Checks the type invariants; used by tests and fuzz targets.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.orig_ids.len();
        if n == 0 {
            return Err("empty node list".into());
        }
        if self.ego_local != 0 {
            return Err("ego must be local index 0".into());
        }
        let mut seen = HashSet::new();
        for &id in &self.orig_ids {
            if !seen.insert(id) {
                return Err(format!("duplicate orig id {id}"));
            }
        }
        if self.features.rows != n {
            return Err("feature row count mismatch".into());
        }
        let edge_set: HashSet<(usize, usize)> = self.local_edges.iter().copied().collect();
        if edge_set.len() != self.local_edges.len() {
            return Err("duplicate local edge".into());
        }
        for &(s, d) in &self.local_edges {
            if s >= n || d >= n {
                return Err(format!("edge ({s}, {d}) out of range"));
            }
            if !edge_set.contains(&(d, s)) {
                return Err(format!("edge ({s}, {d}) lacks its reverse"));
            }
        }
        if n == 1 && self.local_edges != vec![(0, 0)] {
            return Err("singleton must carry exactly the self-loop (0, 0)".into());
        }
        if !self.local_edges.iter().any(|&(s, d)| s == 0 || d == 0) {
            return Err("ego has no incident edge".into());
        }
        Ok(())
    }
}

fn pick_neighbor(
    graph: &GraphStore,
    v: usize,
    direction: WalkDirection,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let (out, inn) = (graph.out_csr.neighbors(v), graph.in_csr.neighbors(v));
    match direction {
        WalkDirection::Out => {
            if out.is_empty() {
                None
            } else {
                Some(out[rng.random_range(0..out.len())])
            }
        }
        WalkDirection::In => {
            if inn.is_empty() {
                None
            } else {
                Some(inn[rng.random_range(0..inn.len())])
            }
        }
        WalkDirection::Both => {
            let total = out.len() + inn.len();
            if total == 0 {
                return None;
            }
            let i = rng.random_range(0..total);
            Some(if i < out.len() { out[i] } else { inn[i - out.len()] })
        }
    }
}

fn has_neighbor(graph: &GraphStore, v: usize, direction: WalkDirection) -> bool {
    match direction {
        WalkDirection::Out => !graph.out_csr.neighbors(v).is_empty(),
        WalkDirection::In => !graph.in_csr.neighbors(v).is_empty(),
        WalkDirection::Both => {
            !graph.out_csr.neighbors(v).is_empty() || !graph.in_csr.neighbors(v).is_empty()
        }
    }
}

/// Runs one RWR walk and returns the distinct nodes in first-visit order,
/// seed first. Each step restarts to the seed with `restart_probability`,
/// otherwise moves to a uniformly random neighbor; a neighbor-less
/// intermediate node forces a restart. Stops once `rw_hops` distinct nodes
/// are collected or `max_steps` steps were taken.
pub fn rwr_walk(
    graph: &GraphStore,
    seed_node: usize,
    config: &WalkConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, SamplerError> {
    if seed_node >= graph.num_nodes {
        return Err(SamplerError::SeedOutOfRange { node: seed_node, num_nodes: graph.num_nodes });
    }
    config.validate()?;
    let mut visited = vec![seed_node];
    if config.rw_hops == 1 || !has_neighbor(graph, seed_node, config.walk_direction) {
        return Ok(visited);
    }
    let mut in_set: HashSet<usize> = HashSet::from([seed_node]);
    let mut current = seed_node;
    let mut steps = 0usize;
    while visited.len() < config.rw_hops && steps < config.max_steps {
        steps += 1;
        if rng.random::<f64>() < config.restart_probability {
            current = seed_node;
            continue;
        }
        current = match pick_neighbor(graph, current, config.walk_direction, rng) {
            Some(next) => next,
            None => {
                current = seed_node;
                continue;
            }
        };
        if in_set.insert(current) {
            visited.push(current);
        }
    }
    Ok(visited)
}

/// Returns exactly the global edges with both endpoints inside `nodes`.
pub fn induce_edges(graph: &GraphStore, nodes: &[usize]) -> Vec<(usize, usize)> {
    let in_set: HashSet<usize> = nodes.iter().copied().collect();
    let mut edges = Vec::new();
    for &u in nodes {
        for &v in graph.out_csr.neighbors(u) {
            if in_set.contains(&v) {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Adds the reverse of every edge and deduplicates. Self-loops stay single.
pub fn bidirectionalize(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(edges.len() * 2);
    for &(s, d) in edges {
        out.push((s, d));
        out.push((d, s));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Relabels nodes to local indices by first-visit order (ego = 0), copies
/// the matching feature rows, and maps edges into local index space.
pub fn anonymize(
    graph: &GraphStore,
    nodes: &[usize],
    edges: &[(usize, usize)],
) -> Result<InducedSubgraph, SamplerError> {
    let local: std::collections::HashMap<usize, usize> =
        nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut local_edges = Vec::with_capacity(edges.len());
    for &(s, d) in edges {
        match (local.get(&s), local.get(&d)) {
            (Some(&ls), Some(&ld)) => local_edges.push((ls, ld)),
            _ => return Err(SamplerError::EdgeOutsideSet { src: s, dst: d }),
        }
    }
    let d = graph.feature_dim();
    let mut features = FeatureMatrix::zeros(nodes.len(), d);
    for (i, &id) in nodes.iter().enumerate() {
        features.row_mut(i).copy_from_slice(graph.features.row(id));
    }
    Ok(InducedSubgraph {
        orig_ids: nodes.to_vec(),
        local_edges,
        features,
        label: graph.labels[nodes[0]],
        ego_local: 0,
    })
}

/// Full sampling pipeline for one seed node. If the subgraph comes out as
/// a singleton, or the ego ends up without any incident local edge, a
/// self-loop (0, 0) is added.
pub fn sample_subgraph(
    graph: &GraphStore,
    v: usize,
    config: &WalkConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InducedSubgraph, SamplerError> {
    let nodes = rwr_walk(graph, v, config, rng)?;
    let induced = induce_edges(graph, &nodes);
    let symmetric = bidirectionalize(&induced);
    let mut sub = anonymize(graph, &nodes, &symmetric)?;
    if !sub.local_edges.iter().any(|&(s, d)| s == 0 || d == 0) {
        sub.local_edges.push((0, 0));
        sub.local_edges.sort_unstable();
    }
    Ok(sub)
}

/// One node's dual samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNode {
    pub ego: usize,
    pub samples: [InducedSubgraph; 2],
}

/// The whole preprocessed corpus: two independent subgraphs per node,
/// drawn once before training.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphCorpus {
    pub feature_dim: usize,
    pub items: Vec<SampledNode>,
}

impl SubgraphCorpus {
    pub fn num_nodes(&self) -> usize {
        self.items.len()
    }
}

fn sample_node(
    graph: &GraphStore,
    v: usize,
    config: &WalkConfig,
) -> Result<SampledNode, SamplerError> {
    let draw = |k: u64| {
        let mut rng = stream_rng(config.seed, StreamKind::Walk, v as u64, k);
        sample_subgraph(graph, v, config, &mut rng)
    };
    Ok(SampledNode { ego: v, samples: [draw(0)?, draw(1)?] })
}

/// Draws the dual-sample corpus sequentially. Every sample has its own
/// RNG stream keyed by (seed, node, sample index), so this is a pure
/// function of the graph and config.
pub fn sample_dataset(
    graph: &GraphStore,
    config: &WalkConfig,
) -> Result<SubgraphCorpus, SamplerError> {
    config.validate()?;
    let items = (0..graph.num_nodes)
        .map(|v| sample_node(graph, v, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SubgraphCorpus { feature_dim: graph.feature_dim(), items })
}

/// Same corpus as [`sample_dataset`], fanned out over `workers` threads.
/// Keyed per-sample streams make the result independent of scheduling.
pub fn sample_dataset_with_workers(
    graph: &GraphStore,
    config: &WalkConfig,
    workers: usize,
) -> Result<SubgraphCorpus, SamplerError> {
    if workers <= 1 {
        return sample_dataset(graph, config);
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SamplerError::BadConfig(format!("worker pool: {e}")))?;
    let items = pool.install(|| {
        (0..graph.num_nodes)
            .into_par_iter()
            .map(|v| sample_node(graph, v, config))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SubgraphCorpus { feature_dim: graph.feature_dim(), items })
}
