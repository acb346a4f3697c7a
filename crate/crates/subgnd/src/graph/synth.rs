//! Synthetic graph generators for desk-scale experiments.

use super::{FeatureMatrix, GraphError, GraphStore};
use crate::rng::{stream_rng, StreamKind};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Synthetic graph families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Same-class ordered pairs connect with `intra_prob`, cross-class
    /// pairs with `inter_prob`.
    PlantedPartition,
    /// The probability roles are swapped: same-class pairs connect with
    /// `inter_prob`, cross-class pairs with `intra_prob`.
    HeterophilicBipartite,
    /// Label-conflict fixture; see [`synth_conflict_fixture`].
    ConflictFixture,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "planted_partition" => Ok(SyntheticKind::PlantedPartition),
            "heterophilic_bipartite" => Ok(SyntheticKind::HeterophilicBipartite),
            "conflict_fixture" => Ok(SyntheticKind::ConflictFixture),
            other => Err(format!(
                "unknown kind {other:?} (expected planted_partition|heterophilic_bipartite|conflict_fixture)"
            )),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SyntheticKind::PlantedPartition => "planted_partition",
            SyntheticKind::HeterophilicBipartite => "heterophilic_bipartite",
            SyntheticKind::ConflictFixture => "conflict_fixture",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), GraphError> {
        if !(0.0..=1.0).contains(&self.intra_prob) || !(0.0..=1.0).contains(&self.inter_prob) {
            return Err(GraphError::BadSpec("probabilities must lie in [0, 1]".into()));
        }
        if self.feature_dim < 1 {
            return Err(GraphError::BadSpec("feature_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(GraphError::BadSpec("num_classes must be >= 2".into()));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(GraphError::BadSpec("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates a random class-structured graph. Nodes are labeled in
/// contiguous balanced blocks; node features are the class mean (a unit
/// basis vector) plus Gaussian noise. Deterministic for a fixed seed.
pub fn synth_graph(spec: &SyntheticSpec) -> Result<GraphStore, GraphError> {
    spec.validate()?;
    let n = spec.num_nodes;
    let c = spec.num_classes;
    let labels: Vec<usize> = {
        let mut v = Vec::with_capacity(n);
        let base = n / c;
        let extra = n % c;
        for class in 0..c {
            let size = base + usize::from(class < extra);
            v.extend(std::iter::repeat_n(class, size));
        }
        v
    };

    let (same_p, cross_p) = match spec.kind {
        SyntheticKind::PlantedPartition => (spec.intra_prob, spec.inter_prob),
        SyntheticKind::HeterophilicBipartite => (spec.inter_prob, spec.intra_prob),
        SyntheticKind::ConflictFixture => {
            return Err(GraphError::BadSpec(
                "use synth_conflict_fixture for the conflict fixture".into(),
            ))
        }
    };

    let mut rng = stream_rng(spec.seed, StreamKind::Synth, n as u64, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = if labels[i] == labels[j] { same_p } else { cross_p };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let d = spec.feature_dim;
    let noise =
        Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("validated noise_std");
    let mut features = FeatureMatrix::zeros(n, d);
    for i in 0..n {
        let row = features.row_mut(i);
        row[labels[i] % d] = 1.0;
        if spec.noise_std > 0.0 {
            for v in row.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }

    GraphStore::new(n, edges, features, labels, c)
}

/// Builds the label-conflict fixture: `num_pairs` pairs of mirrored
/// two-node stars. Pair i draws feature vectors `a != b`; component A is
/// hub(a) -- leaf(b), component B is hub(b) -- leaf(a), with symmetric
/// edges inside each component. A node's label follows its feature role
/// (a -> 0, b -> 1), so within every component the ego-stripped content
/// is identical across the two labels: any permutation-invariant pooling
/// over all node features (raw or message-passed) cannot separate them,
/// while the ego role can.
pub fn synth_conflict_fixture(
    num_pairs: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<GraphStore, GraphError> {
    if num_pairs < 1 {
        return Err(GraphError::BadSpec("num_pairs must be >= 1".into()));
    }
    if feature_dim < 1 {
        return Err(GraphError::BadSpec("feature_dim must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, StreamKind::Synth, num_pairs as u64, 1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 4 * num_pairs;
    let mut features = FeatureMatrix::zeros(n, feature_dim);
    let mut labels = vec![0usize; n];
    let mut edges = Vec::with_capacity(4 * num_pairs);
    for p in 0..num_pairs {
        let mut a: Vec<f64> = (0..feature_dim).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..feature_dim).map(|_| normal.sample(&mut rng)).collect();
        if a == b {
            a[0] += 1.0;
        }
        let base = 4 * p;
        // component A: hub carries a, leaf carries b
        features.row_mut(base).copy_from_slice(&a);
        features.row_mut(base + 1).copy_from_slice(&b);
        // component B: hub carries b, leaf carries a
        features.row_mut(base + 2).copy_from_slice(&b);
        features.row_mut(base + 3).copy_from_slice(&a);
        labels[base] = 0;
        labels[base + 1] = 1;
        labels[base + 2] = 1;
        labels[base + 3] = 0;
        edges.push((base, base + 1));
        edges.push((base + 1, base));
        edges.push((base + 2, base + 3));
        edges.push((base + 3, base + 2));
    }
    GraphStore::new(n, edges, features, labels, 2)
}
