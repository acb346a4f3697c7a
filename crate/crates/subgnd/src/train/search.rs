//! Seeded uniform random hyperparameter search.
//!
//! Each trial draws one configuration from the space (fixed draw order,
//! one RNG stream per trial index), runs a single fit, and scores it by
//! validation accuracy. Failed trials are recorded with their error and
//! skipped; the best trial is the validation argmax, first on ties.

use crate::autodiff::PoolMode;
use crate::graph::{GraphStore, SplitAssignment};
use crate::model::ModelConfig;
use crate::rng::{stream_rng, StreamKind};
use crate::sampler::WalkConfig;
use crate::train::{fit, TrainConfig, TrainError};
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SearchSpace {
    /// Log-uniform learning-rate range (inclusive bounds, both positive).
    pub lr_range: (f64, f64),
    /// Log-uniform weight-decay range (inclusive bounds, both positive).
    pub weight_decay_range: (f64, f64),
    /// Uniform dropout range.
    pub dropout_range: (f64, f64),
    pub hidden_choices: Vec<usize>,
    pub num_layers_choices: Vec<usize>,
    pub eps_choices: Vec<f64>,
    pub rw_hops_choices: Vec<usize>,
    pub alter_pool_choices: Vec<PoolMode>,
    /// Number of trials to draw.
    pub budget: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr_range: (1e-4, 1e-1),
            weight_decay_range: (1e-6, 1e-2),
            dropout_range: (0.0, 0.7),
            hidden_choices: vec![32, 64, 128],
            num_layers_choices: vec![1, 2, 3],
            eps_choices: vec![-1.0, 0.0, 1.0],
            rw_hops_choices: vec![16, 32, 64, 128, 256],
            alter_pool_choices: vec![PoolMode::Max, PoolMode::Mean, PoolMode::Sum],
            budget: 150,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TrainError> {
        let log_range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !log_range_ok(self.lr_range) {
            return Err(TrainError::BadConfig("lr_range must satisfy 0 < lo <= hi".into()));
        }
        if !log_range_ok(self.weight_decay_range) {
            return Err(TrainError::BadConfig(
                "weight_decay_range must satisfy 0 < lo <= hi".into(),
            ));
        }
        let (dlo, dhi) = self.dropout_range;
        if !(0.0..1.0).contains(&dlo) || !(0.0..1.0).contains(&dhi) || dlo > dhi {
            return Err(TrainError::BadConfig(
                "dropout_range must satisfy 0 <= lo <= hi < 1".into(),
            ));
        }
        if self.hidden_choices.is_empty()
            || self.num_layers_choices.is_empty()
            || self.eps_choices.is_empty()
            || self.rw_hops_choices.is_empty()
            || self.alter_pool_choices.is_empty()
        {
            return Err(TrainError::BadConfig("every choice list needs an entry".into()));
        }
        if self.hidden_choices.contains(&0)
            || self.num_layers_choices.contains(&0)
            || self.rw_hops_choices.contains(&0)
        {
            return Err(TrainError::BadConfig("choices must be positive".into()));
        }
        if self.budget < 1 {
            return Err(TrainError::BadConfig("budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled configuration and its outcome. `error` is set (and the
/// accuracies are NaN) when the fit failed.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub num_layers: usize,
    pub eps: f64,
    pub rw_hops: usize,
    pub alter_pool: PoolMode,
    pub val_acc: f64,
    pub test_acc: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo..hi)
}

fn choose<T: Copy>(rng: &mut impl Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

fn draw_trial(space: &SearchSpace, seed: u64, index: usize) -> Trial {
    let mut rng = stream_rng(seed, StreamKind::Search, index as u64, 0);
    Trial {
        index,
        lr: log_uniform(&mut rng, space.lr_range),
        weight_decay: log_uniform(&mut rng, space.weight_decay_range),
        dropout: uniform(&mut rng, space.dropout_range),
        hidden: choose(&mut rng, &space.hidden_choices),
        num_layers: choose(&mut rng, &space.num_layers_choices),
        eps: choose(&mut rng, &space.eps_choices),
        rw_hops: choose(&mut rng, &space.rw_hops_choices),
        alter_pool: choose(&mut rng, &space.alter_pool_choices),
        val_acc: f64::NAN,
        test_acc: f64::NAN,
        error: None,
    }
}

/// Draws `space.budget` configurations, fits each once over the base
/// configs with its drawn hyperparameters substituted in, and returns the
/// trial with the highest validation accuracy (first on ties) plus the
/// full trial log. Failed trials carry their error message and never win.
pub fn random_search(
    graph: &GraphStore,
    split: &SplitAssignment,
    base_walk: &WalkConfig,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    space: &SearchSpace,
    seed: u64,
) -> Result<SearchResult, TrainError> {
    space.validate()?;
    base_train.validate()?;
    let mut trials = Vec::with_capacity(space.budget);
    for index in 0..space.budget {
        let mut trial = draw_trial(space, seed, index);

        let mut wc = base_walk.clone();
        wc.rw_hops = trial.rw_hops;
        wc.max_steps = 16 * trial.rw_hops;
        let mut mc = base_model.clone();
        mc.hidden = trial.hidden;
        mc.num_layers = trial.num_layers;
        mc.eps = trial.eps;
        mc.dropout = trial.dropout;
        mc.alter_pool = trial.alter_pool;
        let mut tc = base_train.clone();
        tc.lr = trial.lr;
        tc.weight_decay = trial.weight_decay;
        tc.num_runs = 1;

        match fit(graph, split, &wc, &mc, &tc) {
            Ok(result) => {
                trial.val_acc = result.val_acc;
                trial.test_acc = result.test_acc;
            }
            Err(e) => trial.error = Some(e.to_string()),
        }
        trials.push(trial);
    }
    let best = trials
        .iter()
        .filter(|t| t.error.is_none())
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if t.val_acc > b.val_acc => Some(t),
            Some(b) => Some(b),
            None => Some(t),
        })
        .cloned()
        .ok_or(TrainError::AllTrialsFailed)?;
    Ok(SearchResult { best, trials })
}

fn trial_row(t: &Trial) -> String {
    let acc = |x: f64| if x.is_nan() { String::new() } else { format!("{x}") };
    let error = t.error.as_deref().unwrap_or("").replace(',', ";");
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        t.index,
        t.lr,
        t.weight_decay,
        t.dropout,
        t.hidden,
        t.num_layers,
        t.eps,
        t.rw_hops,
        t.alter_pool,
        acc(t.val_acc),
        acc(t.test_acc),
        error
    )
}

pub fn trial_csv_string(trials: &[Trial]) -> String {
    let mut out = String::from(
        "trial,lr,weight_decay,dropout,hidden,num_layers,eps,rw_hops,alter_pool,val_acc,test_acc,error\n",
    );
    for t in trials {
        out.push_str(&trial_row(t));
        out.push('\n');
    }
    out
}

pub fn write_trial_csv(path: &Path, trials: &[Trial]) -> Result<(), TrainError> {
    std::fs::write(path, trial_csv_string(trials))?;
    Ok(())
}
