//! The subgraph classifier.
//!
//! SubGND pipeline: input projection d→H → (train-mode dropout) →
//! differentiated zero-padding to width 2H (ego left half, alters right
//! half) → L GIN layers → elementwise max over the L layer outputs →
//! ego row ∥ pooled alter rows (4H) → adaptive per-block scaling via
//! softmax of four logits → two-layer head 4H→H→C.
//!
//! The Base variant runs the same GIN trunk at width H without the
//! padding, pools all final-layer rows, and feeds H→H→C; it cannot tell
//! which node the subgraph was drawn for, which is exactly the contrast
//! the fixture graphs exercise.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint_bytes, CheckpointError,
};

use crate::autodiff::{softmax_values, AutodiffError, PoolMode, Shape, Tape, TensorId};
use crate::rng::{stream_rng, StreamKind};
use crate::sampler::InducedSubgraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("feature width {got} does not match input_dim {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("non-finite logits (training diverged)")]
    NonFinite,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    SubGnd,
    Base,
}

impl std::str::FromStr for ModelVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subgnd" => Ok(ModelVariant::SubGnd),
            "base" => Ok(ModelVariant::Base),
            other => Err(format!("unknown variant {other:?} (expected subgnd|base)")),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelVariant::SubGnd => "subgnd",
            ModelVariant::Base => "base",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub input_dim: usize,
    pub hidden: usize,
    pub num_layers: usize,
    /// GIN self-weight ε, shared across layers; a hyperparameter, not a
    /// learned value.
    pub eps: f64,
    pub alter_pool: PoolMode,
    pub dropout: f64,
    pub num_classes: usize,
    pub mlp_depth: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            variant: ModelVariant::SubGnd,
            input_dim,
            hidden,
            num_layers: 2,
            eps: 0.0,
            alter_pool: PoolMode::Max,
            dropout: 0.0,
            num_classes,
            mlp_depth: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim < 1 {
            return Err(ModelError::BadConfig("input_dim must be >= 1".into()));
        }
        if self.hidden < 1 {
            return Err(ModelError::BadConfig("hidden must be >= 1".into()));
        }
        if self.num_layers < 1 {
            return Err(ModelError::BadConfig("num_layers must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig("dropout must lie in [0, 1)".into()));
        }
        if self.mlp_depth < 1 {
            return Err(ModelError::BadConfig("mlp_depth must be >= 1".into()));
        }
        if !self.eps.is_finite() {
            return Err(ModelError::BadConfig("eps must be finite".into()));
        }
        Ok(())
    }

    /// Node-embedding width inside the GIN trunk.
    pub fn trunk_width(&self) -> usize {
        match self.variant {
            ModelVariant::SubGnd => 2 * self.hidden,
            ModelVariant::Base => self.hidden,
        }
    }

    /// Width of the vector entering the head.
    pub fn head_input(&self) -> usize {
        match self.variant {
            ModelVariant::SubGnd => 4 * self.hidden,
            ModelVariant::Base => self.hidden,
        }
    }
}

/// One dense layer's parameters, row-major weight [in×out] plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense { in_dim, out_dim, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Dense { in_dim, out_dim, w, b: vec![0.0; out_dim] }
    }
}

/// All learnable tensors. `scaling_logits` is present only for the SubGND
/// variant (empty for Base). Tensor traversal order is fixed by
/// [`ModelParams::visit`] and shared by the optimizer and the checkpoint
/// format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub proj: Dense,
    pub gin: Vec<Vec<Dense>>,
    pub scaling_logits: Vec<f64>,
    pub head: Vec<Dense>,
}

impl ModelParams {
    /// Names and data of every tensor in declaration order.
    pub fn visit(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("proj.w".into(), self.proj.w.as_slice()),
            ("proj.b".into(), self.proj.b.as_slice()),
        ];
        for (k, mlp) in self.gin.iter().enumerate() {
            for (j, d) in mlp.iter().enumerate() {
                out.push((format!("gin.{k}.{j}.w"), d.w.as_slice()));
                out.push((format!("gin.{k}.{j}.b"), d.b.as_slice()));
            }
        }
        if !self.scaling_logits.is_empty() {
            out.push(("scaling_logits".into(), self.scaling_logits.as_slice()));
        }
        for (i, d) in self.head.iter().enumerate() {
            out.push((format!("head.{i}.w"), d.w.as_slice()));
            out.push((format!("head.{i}.b"), d.b.as_slice()));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("proj.w".into(), self.proj.w.as_mut_slice()),
            ("proj.b".into(), self.proj.b.as_mut_slice()),
        ];
        for (k, mlp) in self.gin.iter_mut().enumerate() {
            for (j, d) in mlp.iter_mut().enumerate() {
                out.push((format!("gin.{k}.{j}.w"), d.w.as_mut_slice()));
                out.push((format!("gin.{k}.{j}.b"), d.b.as_mut_slice()));
            }
        }
        if !self.scaling_logits.is_empty() {
            out.push(("scaling_logits".into(), self.scaling_logits.as_mut_slice()));
        }
        for (i, d) in self.head.iter_mut().enumerate() {
            out.push((format!("head.{i}.w"), d.w.as_mut_slice()));
            out.push((format!("head.{i}.b"), d.b.as_mut_slice()));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.visit().iter().map(|(_, d)| d.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.visit().iter().all(|(_, d)| d.iter().all(|x| x.is_finite()))
    }

    /// Current α = softmax(scaling_logits); `None` for the Base variant.
    pub fn alphas(&self) -> Option<[f64; 4]> {
        if self.scaling_logits.is_empty() {
            return None;
        }
        let a = softmax_values(&self.scaling_logits);
        Some([a[0], a[1], a[2], a[3]])
    }

    /// Every tensor concatenated in visit order.
    pub fn to_flat_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, d) in self.visit() {
            out.extend_from_slice(d);
        }
        out
    }

    /// Inverse of [`Self::to_flat_vec`]; `flat` must have exactly
    /// `num_scalars` entries.
    pub fn copy_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length mismatch");
        let mut offset = 0;
        for (_, d) in self.visit_mut() {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        }
    }
}

/// Xavier-uniform weights, zero biases, zero scaling logits; a pure
/// function of (config, seed).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = stream_rng(seed, StreamKind::Init, 0, 0);
    let (h, t) = (config.hidden, config.trunk_width());
    let proj = Dense::init(config.input_dim, h, &mut rng);
    let gin = (0..config.num_layers)
        .map(|_| (0..config.mlp_depth).map(|_| Dense::init(t, t, &mut rng)).collect())
        .collect();
    let scaling_logits = match config.variant {
        ModelVariant::SubGnd => vec![0.0; 4],
        ModelVariant::Base => Vec::new(),
    };
    let head = vec![
        Dense::init(config.head_input(), h, &mut rng),
        Dense::init(h, config.num_classes, &mut rng),
    ];
    Ok(ModelParams { proj, gin, scaling_logits, head })
}

/// Skeleton with the right tensor shapes for `config`, all zeros; the
/// checkpoint reader fills it in place.
pub(crate) fn zeroed_params(config: &ModelConfig) -> ModelParams {
    let (h, t) = (config.hidden, config.trunk_width());
    ModelParams {
        proj: Dense::zeros(config.input_dim, h),
        gin: (0..config.num_layers)
            .map(|_| (0..config.mlp_depth).map(|_| Dense::zeros(t, t)).collect())
            .collect(),
        scaling_logits: match config.variant {
            ModelVariant::SubGnd => vec![0.0; 4],
            ModelVariant::Base => Vec::new(),
        },
        head: vec![Dense::zeros(config.head_input(), h), Dense::zeros(h, config.num_classes)],
    }
}

/// Forward mode: training needs an RNG for dropout masks; eval is fully
/// deterministic.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Handles of the parameter tensors materialized on a tape, in the same
/// order as [`ModelParams::visit`].
pub struct TapeParams {
    proj: (TensorId, TensorId),
    gin: Vec<Vec<(TensorId, TensorId)>>,
    scaling_logits: Option<TensorId>,
    head: Vec<(TensorId, TensorId)>,
}

impl TapeParams {
    /// Flat tensor ids aligned with [`ModelParams::visit`] order.
    pub fn flat(&self) -> Vec<TensorId> {
        let mut out = vec![self.proj.0, self.proj.1];
        for mlp in &self.gin {
            for &(w, b) in mlp {
                out.push(w);
                out.push(b);
            }
        }
        if let Some(l) = self.scaling_logits {
            out.push(l);
        }
        for &(w, b) in &self.head {
            out.push(w);
            out.push(b);
        }
        out
    }
}

fn dense_on_tape(tape: &mut Tape, d: &Dense) -> (TensorId, TensorId) {
    let w = tape.param(Shape::Matrix(d.in_dim, d.out_dim), d.w.clone());
    let b = tape.param(Shape::Vector(d.out_dim), d.b.clone());
    (w, b)
}

/// Copies every parameter onto the tape as differentiable leaves. Do this
/// once per tape, then run any number of forward graphs against it.
pub fn load_params(tape: &mut Tape, params: &ModelParams) -> TapeParams {
    TapeParams {
        proj: dense_on_tape(tape, &params.proj),
        gin: params
            .gin
            .iter()
            .map(|mlp| mlp.iter().map(|d| dense_on_tape(tape, d)).collect())
            .collect(),
        scaling_logits: if params.scaling_logits.is_empty() {
            None
        } else {
            Some(tape.param(Shape::Vector(4), params.scaling_logits.clone()))
        },
        head: params.head.iter().map(|d| dense_on_tape(tape, d)).collect(),
    }
}

/// One GIN update: h_v ← MLP((1+ε)·h_v + Σ_{(u,v)∈E} h_u), with ReLU
/// between (not after) the MLP's linear layers.
fn gin_layer(
    tape: &mut Tape,
    h: TensorId,
    edges: &[(usize, usize)],
    n: usize,
    eps: f64,
    mlp: &[(TensorId, TensorId)],
) -> Result<TensorId, ModelError> {
    let srcs: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dsts: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let msgs = tape.select_rows(h, &srcs)?;
    let agg = tape.segment_sum(msgs, &dsts, n)?;
    let selfed = tape.scale(h, 1.0 + eps);
    let mut cur = tape.add(selfed, agg)?;
    for (j, &(w, b)) in mlp.iter().enumerate() {
        cur = tape.linear(cur, w, b)?;
        if j + 1 < mlp.len() {
            cur = tape.relu(cur);
        }
    }
    Ok(cur)
}

/// Shared trunk: projection, optional dropout, optional zero-padding, L
/// GIN layers. Returns the per-layer outputs h^(1)..h^(L).
fn trunk(
    tape: &mut Tape,
    tp: &TapeParams,
    sub: &InducedSubgraph,
    config: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Vec<TensorId>, ModelError> {
    config.validate()?;
    if sub.features.cols != config.input_dim {
        return Err(ModelError::FeatureDim { expected: config.input_dim, got: sub.features.cols });
    }
    let n = sub.num_nodes();
    let x = tape.input(Shape::Matrix(n, config.input_dim), sub.features.data.clone());
    let mut h = tape.linear(x, tp.proj.0, tp.proj.1)?;
    if let Mode::Train(rng) = mode {
        if config.dropout > 0.0 {
            h = tape.dropout(h, config.dropout, rng)?;
        }
    }
    if config.variant == ModelVariant::SubGnd {
        h = tape.zero_pad(h, sub.ego_local)?;
    }
    let mut layers = Vec::with_capacity(config.num_layers);
    for k in 0..config.num_layers {
        h = gin_layer(tape, h, &sub.local_edges, n, config.eps, &tp.gin[k])?;
        layers.push(h);
    }
    Ok(layers)
}

fn head(tape: &mut Tape, tp: &TapeParams, mut v: TensorId) -> Result<TensorId, ModelError> {
    for (i, &(w, b)) in tp.head.iter().enumerate() {
        v = tape.linear(v, w, b)?;
        if i + 1 < tp.head.len() {
            v = tape.relu(v);
        }
    }
    Ok(v)
}

/// Builds the forward graph for one subgraph on an existing tape and
/// returns the logits tensor. Dispatches on `config.variant`.
pub fn forward_on_tape(
    tape: &mut Tape,
    tp: &TapeParams,
    sub: &InducedSubgraph,
    config: &ModelConfig,
    mut mode: Mode<'_>,
) -> Result<TensorId, ModelError> {
    let layers = trunk(tape, tp, sub, config, &mut mode)?;
    let logits = match config.variant {
        ModelVariant::SubGnd => {
            let mut pooled = layers[0];
            for &l in &layers[1..] {
                pooled = tape.maximum(pooled, l)?;
            }
            let ego = tape.row(pooled, sub.ego_local)?;
            let alter_idx: Vec<usize> =
                (0..sub.num_nodes()).filter(|&i| i != sub.ego_local).collect();
            let alters = tape.select_rows(pooled, &alter_idx)?;
            let alter = tape.pool(alters, config.alter_pool)?;
            let cat = tape.concat(ego, alter)?;
            let logits_id = tp
                .scaling_logits
                .ok_or_else(|| ModelError::BadConfig("params lack scaling_logits".into()))?;
            let scaled = tape.adaptive_scale(cat, logits_id)?;
            head(tape, tp, scaled)?
        }
        ModelVariant::Base => {
            let readout = tape.pool(*layers.last().unwrap(), config.alter_pool)?;
            head(tape, tp, readout)?
        }
    };
    if tape.value(logits).iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok(logits)
}

/// Convenience single-subgraph forward on a fresh tape.
pub fn forward(
    sub: &InducedSubgraph,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode<'_>,
) -> Result<(Tape, TapeParams, TensorId), ModelError> {
    let mut tape = Tape::new();
    let tp = load_params(&mut tape, params);
    let logits = forward_on_tape(&mut tape, &tp, sub, config, mode)?;
    Ok((tape, tp, logits))
}

/// Eval-mode logits as plain values.
pub fn eval_logits(
    sub: &InducedSubgraph,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>, ModelError> {
    let (tape, _, logits) = forward(sub, params, config, Mode::Eval)?;
    Ok(tape.value(logits).to_vec())
}
