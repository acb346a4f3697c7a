//! Flat-key run configuration: `section.key = value` text files.
//!
//! Every key has a default except the dataset paths; unknown keys are a
//! hard error. The manifest writer emits the fully-resolved configuration
//! (defaults included, derived values filled in) with sorted keys, so a
//! manifest is itself a valid config file that reproduces the run.

use crate::autodiff::PoolMode;
use crate::graph::{SyntheticKind, SyntheticSpec};
use crate::model::{ModelConfig, ModelVariant};
use crate::sampler::{WalkConfig, WalkDirection};
use crate::train::{SearchSpace, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("line {line}: {inner}")]
    AtLine { line: usize, inner: Box<ConfigError> },
    #[error("config key `{key}`: cannot parse {value:?}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("missing required config key `{key}`")]
    MissingKey { key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSection {
    pub restart_probability: f64,
    pub rw_hops: usize,
    pub direction: WalkDirection,
    /// Defaults to 16×rw_hops when absent.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub variant: ModelVariant,
    pub hidden: usize,
    pub num_layers: usize,
    pub eps: f64,
    pub alter_pool: PoolMode,
    pub dropout: f64,
    pub mlp_depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSection {
    pub budget: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub weight_decay_min: f64,
    pub weight_decay_max: f64,
    pub dropout_min: f64,
    pub dropout_max: f64,
    pub hidden: Vec<usize>,
    pub num_layers: Vec<usize>,
    pub eps: Vec<f64>,
    pub rw_hops: Vec<usize>,
    pub alter_pool: Vec<PoolMode>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSection {
    pub kind: SyntheticKind,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Component pairs for the conflict fixture; ignored otherwise.
    pub pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub walk: WalkSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub search: SearchSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let defaults = SearchSpace::default();
        Self {
            data: DataSection {
                edges: None,
                features: None,
                labels: None,
                output_dir: PathBuf::from("out"),
            },
            split: SplitSection { train: 0.48, val: 0.32, test: 0.2, seed: 0 },
            walk: WalkSection {
                restart_probability: 0.8,
                rw_hops: 16,
                direction: WalkDirection::Out,
                max_steps: None,
                seed: 0,
            },
            model: ModelSection {
                variant: ModelVariant::SubGnd,
                hidden: 64,
                num_layers: 2,
                eps: 0.0,
                alter_pool: PoolMode::Max,
                dropout: 0.0,
                mlp_depth: 2,
            },
            train: TrainConfig::new(0),
            search: SearchSection {
                budget: defaults.budget,
                lr_min: defaults.lr_range.0,
                lr_max: defaults.lr_range.1,
                weight_decay_min: defaults.weight_decay_range.0,
                weight_decay_max: defaults.weight_decay_range.1,
                dropout_min: defaults.dropout_range.0,
                dropout_max: defaults.dropout_range.1,
                hidden: defaults.hidden_choices,
                num_layers: defaults.num_layers_choices,
                eps: defaults.eps_choices,
                rw_hops: defaults.rw_hops_choices,
                alter_pool: defaults.alter_pool_choices,
                seed: 0,
            },
            synth: SynthSection {
                kind: SyntheticKind::PlantedPartition,
                num_nodes: 200,
                num_classes: 2,
                intra_prob: 0.3,
                inter_prob: 0.02,
                feature_dim: 8,
                noise_std: 1.0,
                pairs: 20,
                seed: 0,
            },
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|piece| parse_as(key, piece)).collect()
}

fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one `section.key` from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "data.edges" => self.data.edges = Some(PathBuf::from(value.trim())),
            "data.features" => self.data.features = Some(PathBuf::from(value.trim())),
            "data.labels" => self.data.labels = Some(PathBuf::from(value.trim())),
            "data.output_dir" => self.data.output_dir = PathBuf::from(value.trim()),

            "split.train" => self.split.train = parse_as(key, value)?,
            "split.val" => self.split.val = parse_as(key, value)?,
            "split.test" => self.split.test = parse_as(key, value)?,
            "split.seed" => self.split.seed = parse_as(key, value)?,

            "walk.restart_probability" => self.walk.restart_probability = parse_as(key, value)?,
            "walk.rw_hops" => self.walk.rw_hops = parse_as(key, value)?,
            "walk.direction" => self.walk.direction = parse_as(key, value)?,
            "walk.max_steps" => self.walk.max_steps = Some(parse_as(key, value)?),
            "walk.seed" => self.walk.seed = parse_as(key, value)?,

            "model.variant" => self.model.variant = parse_as(key, value)?,
            "model.hidden" => self.model.hidden = parse_as(key, value)?,
            "model.num_layers" => self.model.num_layers = parse_as(key, value)?,
            "model.eps" => self.model.eps = parse_as(key, value)?,
            "model.alter_pool" => self.model.alter_pool = parse_as(key, value)?,
            "model.dropout" => self.model.dropout = parse_as(key, value)?,
            "model.mlp_depth" => self.model.mlp_depth = parse_as(key, value)?,

            "train.lr" => self.train.lr = parse_as(key, value)?,
            "train.alpha_lr" => self.train.alpha_lr = parse_as(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_as(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_as(key, value)?,
            "train.patience" => self.train.patience = parse_as(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_as(key, value)?,
            "train.beta1" => self.train.beta1 = parse_as(key, value)?,
            "train.beta2" => self.train.beta2 = parse_as(key, value)?,
            "train.adam_eps" => self.train.adam_eps = parse_as(key, value)?,
            "train.seed" => self.train.seed = parse_as(key, value)?,
            "train.num_runs" => self.train.num_runs = parse_as(key, value)?,

            "search.budget" => self.search.budget = parse_as(key, value)?,
            "search.lr_min" => self.search.lr_min = parse_as(key, value)?,
            "search.lr_max" => self.search.lr_max = parse_as(key, value)?,
            "search.weight_decay_min" => self.search.weight_decay_min = parse_as(key, value)?,
            "search.weight_decay_max" => self.search.weight_decay_max = parse_as(key, value)?,
            "search.dropout_min" => self.search.dropout_min = parse_as(key, value)?,
            "search.dropout_max" => self.search.dropout_max = parse_as(key, value)?,
            "search.hidden" => self.search.hidden = parse_list(key, value)?,
            "search.num_layers" => self.search.num_layers = parse_list(key, value)?,
            "search.eps" => self.search.eps = parse_list(key, value)?,
            "search.rw_hops" => self.search.rw_hops = parse_list(key, value)?,
            "search.alter_pool" => self.search.alter_pool = parse_list(key, value)?,
            "search.seed" => self.search.seed = parse_as(key, value)?,

            "synth.kind" => self.synth.kind = parse_as(key, value)?,
            "synth.num_nodes" => self.synth.num_nodes = parse_as(key, value)?,
            "synth.num_classes" => self.synth.num_classes = parse_as(key, value)?,
            "synth.intra_prob" => self.synth.intra_prob = parse_as(key, value)?,
            "synth.inter_prob" => self.synth.inter_prob = parse_as(key, value)?,
            "synth.feature_dim" => self.synth.feature_dim = parse_as(key, value)?,
            "synth.noise_std" => self.synth.noise_std = parse_as(key, value)?,
            "synth.pairs" => self.synth.pairs = parse_as(key, value)?,
            "synth.seed" => self.synth.seed = parse_as(key, value)?,

            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Applies `key=value` override strings (CLI `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for pair in overrides {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedLine { line: 0, text: pair.clone() })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            restart_probability: self.walk.restart_probability,
            rw_hops: self.walk.rw_hops,
            walk_direction: self.walk.direction,
            max_steps: self.walk.max_steps.unwrap_or(16 * self.walk.rw_hops),
            seed: self.walk.seed,
        }
    }

    /// Model config with the data-derived dimensions filled in.
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.model.variant,
            input_dim,
            hidden: self.model.hidden,
            num_layers: self.model.num_layers,
            eps: self.model.eps,
            alter_pool: self.model.alter_pool,
            dropout: self.model.dropout,
            num_classes,
            mlp_depth: self.model.mlp_depth,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            lr_range: (self.search.lr_min, self.search.lr_max),
            weight_decay_range: (self.search.weight_decay_min, self.search.weight_decay_max),
            dropout_range: (self.search.dropout_min, self.search.dropout_max),
            hidden_choices: self.search.hidden.clone(),
            num_layers_choices: self.search.num_layers.clone(),
            eps_choices: self.search.eps.clone(),
            rw_hops_choices: self.search.rw_hops.clone(),
            alter_pool_choices: self.search.alter_pool.clone(),
            budget: self.search.budget,
        }
    }

    pub fn synth_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.synth.kind,
            num_nodes: self.synth.num_nodes,
            num_classes: self.synth.num_classes,
            intra_prob: self.synth.intra_prob,
            inter_prob: self.synth.inter_prob,
            feature_dim: self.synth.feature_dim,
            noise_std: self.synth.noise_std,
            seed: self.synth.seed,
        }
    }

    /// The three dataset paths, or which key is missing.
    pub fn dataset_paths(&self) -> Result<(&Path, &Path, &Path), ConfigError> {
        fn need<'a>(opt: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
            opt.as_deref().ok_or_else(|| ConfigError::MissingKey { key: key.to_string() })
        }
        Ok((
            need(&self.data.edges, "data.edges")?,
            need(&self.data.features, "data.features")?,
            need(&self.data.labels, "data.labels")?,
        ))
    }

    /// Fully-resolved sorted `key = value` text. Parsing it back yields an
    /// equivalent config.
    pub fn manifest_string(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| rows.push((k.to_string(), v));

        if let Some(p) = &self.data.edges {
            push("data.edges", p.display().to_string());
        }
        if let Some(p) = &self.data.features {
            push("data.features", p.display().to_string());
        }
        if let Some(p) = &self.data.labels {
            push("data.labels", p.display().to_string());
        }
        push("data.output_dir", self.data.output_dir.display().to_string());

        push("split.train", self.split.train.to_string());
        push("split.val", self.split.val.to_string());
        push("split.test", self.split.test.to_string());
        push("split.seed", self.split.seed.to_string());

        push("walk.restart_probability", self.walk.restart_probability.to_string());
        push("walk.rw_hops", self.walk.rw_hops.to_string());
        push("walk.direction", self.walk.direction.to_string());
        push("walk.max_steps", self.walk_config().max_steps.to_string());
        push("walk.seed", self.walk.seed.to_string());

        push("model.variant", self.model.variant.to_string());
        push("model.hidden", self.model.hidden.to_string());
        push("model.num_layers", self.model.num_layers.to_string());
        push("model.eps", self.model.eps.to_string());
        push("model.alter_pool", self.model.alter_pool.to_string());
        push("model.dropout", self.model.dropout.to_string());
        push("model.mlp_depth", self.model.mlp_depth.to_string());

        push("train.lr", self.train.lr.to_string());
        push("train.alpha_lr", self.train.alpha_lr.to_string());
        push("train.weight_decay", self.train.weight_decay.to_string());
        push("train.max_epochs", self.train.max_epochs.to_string());
        push("train.patience", self.train.patience.to_string());
        push("train.batch_size", self.train.batch_size.to_string());
        push("train.beta1", self.train.beta1.to_string());
        push("train.beta2", self.train.beta2.to_string());
        push("train.adam_eps", self.train.adam_eps.to_string());
        push("train.seed", self.train.seed.to_string());
        push("train.num_runs", self.train.num_runs.to_string());

        push("search.budget", self.search.budget.to_string());
        push("search.lr_min", self.search.lr_min.to_string());
        push("search.lr_max", self.search.lr_max.to_string());
        push("search.weight_decay_min", self.search.weight_decay_min.to_string());
        push("search.weight_decay_max", self.search.weight_decay_max.to_string());
        push("search.dropout_min", self.search.dropout_min.to_string());
        push("search.dropout_max", self.search.dropout_max.to_string());
        push("search.hidden", join_list(&self.search.hidden));
        push("search.num_layers", join_list(&self.search.num_layers));
        push("search.eps", join_list(&self.search.eps));
        push("search.rw_hops", join_list(&self.search.rw_hops));
        push("search.alter_pool", join_list(&self.search.alter_pool));
        push("search.seed", self.search.seed.to_string());

        push("synth.kind", self.synth.kind.to_string());
        push("synth.num_nodes", self.synth.num_nodes.to_string());
        push("synth.num_classes", self.synth.num_classes.to_string());
        push("synth.intra_prob", self.synth.intra_prob.to_string());
        push("synth.inter_prob", self.synth.inter_prob.to_string());
        push("synth.feature_dim", self.synth.feature_dim.to_string());
        push("synth.noise_std", self.synth.noise_std.to_string());
        push("synth.pairs", self.synth.pairs.to_string());
        push("synth.seed", self.synth.seed.to_string());

        rows.sort();
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.manifest_string())?;
        Ok(())
    }
}

/// Parses config text over the defaults. Lines are `section.key = value`;
/// blank lines and `#` comments are skipped.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedLine { line: line_no, text: line.to_string() })?;
        cfg.set(key.trim(), value)
            .map_err(|e| ConfigError::AtLine { line: line_no, inner: Box::new(e) })?;
    }
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_run_config(&std::fs::read_to_string(path)?)
}
