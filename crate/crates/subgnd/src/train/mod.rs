//! Adam training with early stopping over a presampled dual-sample corpus.
//!
//! Subgraphs are drawn once before the first epoch. Every epoch shuffles
//! the train egos, walks them in mini-batches, and for each ego runs a
//! separate backward pass per dual sample, summing the gradients; one
//! optimizer step per batch. Early stopping watches validation accuracy
//! and the best epoch's parameters are what a fit returns.

mod search;

pub use search::{random_search, write_trial_csv, SearchResult, SearchSpace, Trial};

use crate::autodiff::{grad_check, AutodiffError, GradCheckReport, Tape, TensorId};
use crate::graph::{GraphStore, SplitAssignment};
use crate::model::{
    forward_on_tape, init_params, load_params, Mode, ModelConfig, ModelError, ModelParams,
};
use crate::rng::{stream_rng, StreamKind};
use crate::sampler::{sample_dataset, InducedSubgraph, SamplerError, SubgraphCorpus, WalkConfig};
use rand::seq::SliceRandom;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch} (training diverged)")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradients (optimizer step aborted)")]
    NonFiniteGrad,
    #[error("split is empty")]
    EmptySplit,
    #[error("every search trial failed")]
    AllTrialsFailed,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Independent learning rate for the scaling logits.
    pub alpha_lr: f64,
    /// Decoupled decay, applied as lr·weight_decay·w to every tensor
    /// except the scaling logits.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Egos per optimizer step (each contributes both samples).
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub num_runs: usize,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            lr: 0.01,
            alpha_lr: 0.01,
            weight_decay: 0.0,
            max_epochs: 150,
            patience: 25,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            num_runs: 10,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::BadConfig("lr must be positive".into()));
        }
        if !(self.alpha_lr > 0.0 && self.alpha_lr.is_finite()) {
            return Err(TrainError::BadConfig("alpha_lr must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::BadConfig("weight_decay must be >= 0".into()));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::BadConfig("max_epochs must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(TrainError::BadConfig("patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::BadConfig("betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(TrainError::BadConfig("adam_eps must be positive".into()));
        }
        if self.num_runs < 1 {
            return Err(TrainError::BadConfig("num_runs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-tensor gradient accumulator aligned with [`ModelParams::visit`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    tensors: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros(params: &ModelParams) -> Self {
        Self { tensors: params.visit().iter().map(|(_, d)| vec![0.0; d.len()]).collect() }
    }

    pub fn reset(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds the tape's gradients; `ids` must be the tape handles in visit
    /// order (see [`crate::model::TapeParams::flat`]).
    pub fn accumulate(&mut self, tape: &Tape, ids: &[TensorId]) {
        assert_eq!(ids.len(), self.tensors.len(), "gradient/parameter tensor count mismatch");
        for (acc, id) in self.tensors.iter_mut().zip(ids) {
            for (a, g) in acc.iter_mut().zip(tape.grad(*id)) {
                *a += g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }
}

/// Adam moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.visit().iter().map(|(_, d)| vec![0.0; d.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update. The scaling logits use `alpha_lr` and
/// are exempt from weight decay; everything else uses `lr` and decays by
/// lr·weight_decay·w.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradBuffer,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGrad);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (i, (name, w)) in params.visit_mut().into_iter().enumerate() {
        let is_logits = name == "scaling_logits";
        let rate = if is_logits { config.alpha_lr } else { config.lr };
        let g = &grads.tensors[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..w.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= rate * mhat / (vhat.sqrt() + config.adam_eps);
            if !is_logits && config.weight_decay > 0.0 {
                w[j] -= config.lr * config.weight_decay * w[j];
            }
        }
    }
    Ok(())
}

fn check_corpus_indices(corpus: &SubgraphCorpus, idx: &[usize]) -> Result<(), TrainError> {
    match idx.iter().find(|&&v| v >= corpus.items.len()) {
        Some(&v) => Err(TrainError::BadConfig(format!(
            "split index {v} out of range for corpus of {}",
            corpus.items.len()
        ))),
        None => Ok(()),
    }
}

/// One pass over the train egos: shuffle, batch, two backward passes per
/// ego with summed gradients, one Adam step per batch. Returns the mean
/// per-sample loss. `observer` fires after every optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    corpus: &SubgraphCorpus,
    train_idx: &[usize],
    params: &mut ModelParams,
    state: &mut AdamState,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    epoch: usize,
    observer: &mut dyn FnMut(&ModelParams),
) -> Result<f64, TrainError> {
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    check_corpus_indices(corpus, train_idx)?;
    let mut order = train_idx.to_vec();
    let mut shuffle_rng = stream_rng(train_config.seed, StreamKind::Shuffle, epoch as u64, 0);
    order.shuffle(&mut shuffle_rng);

    let mut grads = GradBuffer::zeros(params);
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in order.chunks(train_config.batch_size) {
        grads.reset();
        for &ego in batch {
            let item = &corpus.items[ego];
            for (k, sub) in item.samples.iter().enumerate() {
                let mut tape = Tape::new();
                let tp = load_params(&mut tape, params);
                let mut dropout_rng = stream_rng(
                    train_config.seed,
                    StreamKind::Dropout,
                    epoch as u64,
                    (ego as u64) << 1 | k as u64,
                );
                let logits = forward_on_tape(
                    &mut tape,
                    &tp,
                    sub,
                    model_config,
                    Mode::Train(&mut dropout_rng),
                )?;
                let loss = tape.cross_entropy(logits, sub.label)?;
                let value = tape.value(loss)[0];
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch });
                }
                total += value;
                count += 1;
                tape.backward(loss)?;
                grads.accumulate(&tape, &tp.flat());
            }
        }
        adam_step(params, &grads, state, train_config)?;
        observer(params);
    }
    Ok(total / count as f64)
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy over a split: per ego the two samples' eval-mode logits are
/// averaged, argmax (ties to the lowest class index) gives the prediction.
pub fn evaluate(
    corpus: &SubgraphCorpus,
    idx: &[usize],
    params: &ModelParams,
    model_config: &ModelConfig,
) -> Result<f64, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    check_corpus_indices(corpus, idx)?;
    let mut correct = 0usize;
    for &ego in idx {
        let item = &corpus.items[ego];
        let mut tape = Tape::new();
        let tp = load_params(&mut tape, params);
        let a = forward_on_tape(&mut tape, &tp, &item.samples[0], model_config, Mode::Eval)?;
        let b = forward_on_tape(&mut tape, &tp, &item.samples[1], model_config, Mode::Eval)?;
        let avg: Vec<f64> =
            tape.value(a).iter().zip(tape.value(b)).map(|(x, y)| (x + y) / 2.0).collect();
        if argmax_lowest(&avg) == item.samples[0].label {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Per-epoch trace row; `alphas` is `None` for the Base variant.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub alphas: Option<[f64; 4]>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub alphas: Option<[f64; 4]>,
    pub metrics: Vec<EpochMetrics>,
}

/// Samples the corpus once, then trains with early stopping on validation
/// accuracy (ties keep the earlier epoch); returns the best epoch's
/// parameters and the full per-epoch trace.
pub fn fit(
    graph: &GraphStore,
    split: &SplitAssignment,
    walk_config: &WalkConfig,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    let corpus = sample_dataset(graph, walk_config)?;
    fit_on_corpus(&corpus, split, model_config, train_config)
}

pub fn fit_on_corpus(
    corpus: &SubgraphCorpus,
    split: &SplitAssignment,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    fit_with_observer(corpus, split, model_config, train_config, &mut |_| {})
}

/// [`fit_on_corpus`] with a hook that fires after every optimizer step;
/// used to assert per-step invariants.
pub fn fit_with_observer(
    corpus: &SubgraphCorpus,
    split: &SplitAssignment,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    observer: &mut dyn FnMut(&ModelParams),
) -> Result<FitResult, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    if model_config.input_dim != corpus.feature_dim {
        return Err(TrainError::BadConfig(format!(
            "model input_dim {} but corpus features have width {}",
            model_config.input_dim, corpus.feature_dim
        )));
    }
    if split.val_idx.is_empty() || split.test_idx.is_empty() {
        return Err(TrainError::EmptySplit);
    }

    let mut params = init_params(model_config, train_config.seed)?;
    let mut state = AdamState::new(&params);
    let mut metrics = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;

    for epoch in 1..=train_config.max_epochs {
        let train_loss = train_epoch(
            corpus,
            &split.train_idx,
            &mut params,
            &mut state,
            model_config,
            train_config,
            epoch,
            observer,
        )?;
        let val_acc = evaluate(corpus, &split.val_idx, &params, model_config)?;
        let test_acc = evaluate(corpus, &split.test_idx, &params, model_config)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_acc,
            test_acc,
            alphas: params.alphas(),
        });
        if val_acc > best_val {
            best_val = val_acc;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_config.patience {
                break;
            }
        }
    }

    let train_acc = evaluate(corpus, &split.train_idx, &best_params, model_config)?;
    let val_acc = evaluate(corpus, &split.val_idx, &best_params, model_config)?;
    let test_acc = evaluate(corpus, &split.test_idx, &best_params, model_config)?;
    let alphas = best_params.alphas();
    Ok(FitResult { params: best_params, best_epoch, train_acc, val_acc, test_acc, alphas, metrics })
}

/// Finite-difference check of the whole pipeline on one (subgraph,
/// params) instance. The scalar under test is the eval-mode
/// cross-entropy of the subgraph against its own label, as a function of
/// the flattened parameter vector; `coords` picks which coordinates to
/// probe.
pub fn end_to_end_grad_check(
    sub: &InducedSubgraph,
    model_config: &ModelConfig,
    params: &ModelParams,
    coords: &[usize],
    fd_eps: f64,
) -> Result<GradCheckReport, TrainError> {
    let mut tape = Tape::new();
    let tp = load_params(&mut tape, params);
    let logits = forward_on_tape(&mut tape, &tp, sub, model_config, Mode::Eval)?;
    let loss = tape.cross_entropy(logits, sub.label)?;
    tape.backward(loss)?;
    let mut analytic = Vec::with_capacity(params.num_scalars());
    for id in tp.flat() {
        analytic.extend_from_slice(tape.grad(id));
    }
    let theta = params.to_flat_vec();
    let template = params.clone();
    let f = |t: &[f64]| -> f64 {
        let mut p = template.clone();
        p.copy_from_flat(t);
        let mut tape = Tape::new();
        let tp = load_params(&mut tape, &p);
        let logits =
            forward_on_tape(&mut tape, &tp, sub, model_config, Mode::Eval).expect("forward");
        let loss = tape.cross_entropy(logits, sub.label).expect("loss");
        tape.value(loss)[0]
    };
    Ok(grad_check(&f, &analytic, &theta, fd_eps, coords))
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub runs: Vec<FitResult>,
}

/// `num_runs` independent fits; run r uses walk seed `walk.seed + r` and
/// train seed `train.seed + r`. Reports mean and population std of test
/// accuracy.
pub fn run_experiment(
    graph: &GraphStore,
    split: &SplitAssignment,
    walk_config: &WalkConfig,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<ExperimentSummary, TrainError> {
    train_config.validate()?;
    let mut runs = Vec::with_capacity(train_config.num_runs);
    for r in 0..train_config.num_runs {
        let mut wc = walk_config.clone();
        wc.seed = walk_config.seed + r as u64;
        let mut tc = train_config.clone();
        tc.seed = train_config.seed + r as u64;
        runs.push(fit(graph, split, &wc, model_config, &tc)?);
    }
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.test_acc).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.test_acc - mean).powi(2)).sum::<f64>() / n;
    Ok(ExperimentSummary { mean_test_acc: mean, std_test_acc: var.sqrt(), runs })
}

fn metrics_row(m: &EpochMetrics) -> String {
    match m.alphas {
        Some(a) => format!(
            "{},{},{},{},{},{},{},{}",
            m.epoch, m.train_loss, m.val_acc, m.test_acc, a[0], a[1], a[2], a[3]
        ),
        None => format!("{},{},{},{},,,,", m.epoch, m.train_loss, m.val_acc, m.test_acc),
    }
}

pub fn metrics_csv_string(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,test_acc,alpha1,alpha2,alpha3,alpha4\n");
    for m in metrics {
        out.push_str(&metrics_row(m));
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<(), TrainError> {
    std::fs::write(path, metrics_csv_string(metrics))?;
    Ok(())
}
