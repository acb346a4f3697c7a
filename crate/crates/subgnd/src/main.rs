//! Command-line front end: reproducible runs driven by a flat-key config
//! file, with `--set key=value` overrides. Every run writes the
//! fully-resolved configuration to `<output_dir>/run.manifest`, which is
//! itself a valid config file reproducing the run.

use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use subgnd::autodiff::DEFAULT_FD_EPS;
use subgnd::config::{load_run_config, ConfigError, RunConfig};
use subgnd::graph::{
    ingest_graph, make_split, synth_conflict_fixture, synth_graph, write_dataset, GraphStore,
    SyntheticKind,
};
use subgnd::model::{init_params, load_checkpoint, save_checkpoint};
use subgnd::rng::{stream_rng, StreamKind};
use subgnd::sampler::{sample_dataset_with_workers, write_corpus};
use subgnd::train::{
    end_to_end_grad_check, evaluate, fit_on_corpus, random_search, write_metrics_csv,
    write_trial_csv,
};

#[derive(Parser)]
#[command(
    name = "subgnd",
    version,
    about = "Node classification via sampled-subgraph classification"
)]
struct Cli {
    /// Config file of `section.key = value` lines; defaults apply to
    /// every key it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.003`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for subgraph sampling. Results are identical for
    /// every worker count; 1 is the reference.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset files and report graph statistics.
    Ingest,
    /// Generate a synthetic dataset into the output directory.
    Synth {
        /// Graph family (overrides `synth.kind`).
        #[arg(long)]
        kind: Option<String>,
        /// Component pairs for the conflict fixture (overrides
        /// `synth.pairs`).
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Sample the dual-subgraph corpus and report a size histogram.
    Sample,
    /// Fit one model; writes metrics.csv and checkpoint.ckpt.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint path; defaults to `<output_dir>/checkpoint.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Random hyperparameter search; writes trials.csv.
    Search,
    /// End-to-end finite-difference gradient check on sampled instances.
    Gradcheck,
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn config(msg: impl std::fmt::Display) -> Self {
        Self { code: 2, msg: msg.to_string() }
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        Self { code: 1, msg: msg.to_string() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.set)?;
    Ok(cfg)
}

fn prepare_output(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.data.output_dir)
        .map_err(|e| CliError::runtime(format!("cannot create output dir: {e}")))?;
    cfg.write_manifest(&cfg.data.output_dir.join("run.manifest"))
        .map_err(|e| CliError::runtime(format!("cannot write manifest: {e}")))?;
    Ok(())
}

fn load_graph(cfg: &RunConfig) -> Result<GraphStore, CliError> {
    let (edges, features, labels) = cfg.dataset_paths()?;
    ingest_graph(edges, features, labels).map_err(CliError::runtime)
}

/// Configs the run needs are validated up front so that invalid settings
/// exit 2 before any real work starts.
fn validate_for_run(cfg: &RunConfig, needs_model: bool) -> Result<(), CliError> {
    cfg.walk_config().validate().map_err(CliError::config)?;
    if needs_model {
        // Dimensions come from the data; placeholders satisfy the
        // structural checks.
        cfg.model_config(1, 2).validate().map_err(CliError::config)?;
        cfg.train_config().validate().map_err(CliError::config)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if cli.workers < 1 {
        return Err(CliError::config("--workers must be >= 1"));
    }
    match &cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Synth { kind, pairs } => cmd_synth(cfg, kind.as_deref(), *pairs),
        Command::Sample => cmd_sample(&cfg, cli.workers),
        Command::Train => cmd_train(&cfg, cli.workers),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint.as_deref(), cli.workers),
        Command::Search => cmd_search(&cfg),
        Command::Gradcheck => cmd_gradcheck(&cfg),
    }
}

fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    prepare_output(cfg)?;
    let mut class_counts = vec![0usize; graph.num_classes];
    for &l in &graph.labels {
        class_counts[l] += 1;
    }
    println!("nodes: {}", graph.num_nodes);
    println!("edges: {}", graph.edges.len());
    println!("feature_dim: {}", graph.feature_dim());
    println!("classes: {}", graph.num_classes);
    for (c, n) in class_counts.iter().enumerate() {
        println!("class {c}: {n} nodes");
    }
    Ok(())
}

fn cmd_synth(mut cfg: RunConfig, kind: Option<&str>, pairs: Option<usize>) -> Result<(), CliError> {
    if let Some(k) = kind {
        cfg.set("synth.kind", k)?;
    }
    if let Some(p) = pairs {
        cfg.set("synth.pairs", &p.to_string())?;
    }
    let graph = match cfg.synth.kind {
        SyntheticKind::ConflictFixture => {
            synth_conflict_fixture(cfg.synth.pairs, cfg.synth.feature_dim, cfg.synth.seed)
        }
        _ => synth_graph(&cfg.synth_spec()),
    }
    .map_err(CliError::config)?;
    prepare_output(&cfg)?;
    write_dataset(&graph, &cfg.data.output_dir).map_err(CliError::runtime)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        graph.num_nodes,
        graph.edges.len(),
        cfg.data.output_dir.display()
    );
    Ok(())
}

fn cmd_sample(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    validate_for_run(cfg, false)?;
    let graph = load_graph(cfg)?;
    prepare_output(cfg)?;
    let corpus = sample_dataset_with_workers(&graph, &cfg.walk_config(), workers)
        .map_err(CliError::runtime)?;
    let path = cfg.data.output_dir.join("corpus.txt");
    write_corpus(&path, &corpus).map_err(CliError::runtime)?;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for item in &corpus.items {
        for sub in &item.samples {
            *histogram.entry(sub.orig_ids.len()).or_default() += 1;
        }
    }
    println!("wrote {} dual samples to {}", corpus.items.len(), path.display());
    println!("subgraph size histogram:");
    for (size, count) in histogram {
        println!("{size} nodes: {count}");
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    validate_for_run(cfg, true)?;
    let graph = load_graph(cfg)?;
    prepare_output(cfg)?;
    let split = make_split(
        graph.num_nodes,
        (cfg.split.train, cfg.split.val, cfg.split.test),
        cfg.split.seed,
    )
    .map_err(CliError::config)?;
    let corpus = sample_dataset_with_workers(&graph, &cfg.walk_config(), workers)
        .map_err(CliError::runtime)?;
    let model_config = cfg.model_config(graph.feature_dim(), graph.num_classes);
    let result = fit_on_corpus(&corpus, &split, &model_config, &cfg.train_config())
        .map_err(CliError::runtime)?;
    write_metrics_csv(&cfg.data.output_dir.join("metrics.csv"), &result.metrics)
        .map_err(CliError::runtime)?;
    save_checkpoint(&cfg.data.output_dir.join("checkpoint.ckpt"), &model_config, &result.params)
        .map_err(CliError::runtime)?;
    println!("best_epoch: {}", result.best_epoch);
    println!("train_acc: {}", result.train_acc);
    println!("val_acc: {}", result.val_acc);
    println!("test_acc: {}", result.test_acc);
    if let Some(a) = result.alphas {
        println!("alphas: {},{},{},{}", a[0], a[1], a[2], a[3]);
    }
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&std::path::Path>,
    workers: usize,
) -> Result<(), CliError> {
    validate_for_run(cfg, false)?;
    let default_path = cfg.data.output_dir.join("checkpoint.ckpt");
    let ckpt_path = checkpoint.unwrap_or(&default_path);
    let (model_config, params) = load_checkpoint(ckpt_path).map_err(CliError::runtime)?;
    let graph = load_graph(cfg)?;
    if model_config.input_dim != graph.feature_dim() {
        return Err(CliError::runtime(format!(
            "checkpoint expects input_dim {} but dataset features have width {}",
            model_config.input_dim,
            graph.feature_dim()
        )));
    }
    prepare_output(cfg)?;
    let split = make_split(
        graph.num_nodes,
        (cfg.split.train, cfg.split.val, cfg.split.test),
        cfg.split.seed,
    )
    .map_err(CliError::config)?;
    let corpus = sample_dataset_with_workers(&graph, &cfg.walk_config(), workers)
        .map_err(CliError::runtime)?;
    let acc =
        evaluate(&corpus, &split.test_idx, &params, &model_config).map_err(CliError::runtime)?;
    println!("test_nodes: {}", split.test_idx.len());
    println!("test_acc: {acc}");
    Ok(())
}

fn cmd_search(cfg: &RunConfig) -> Result<(), CliError> {
    validate_for_run(cfg, true)?;
    cfg.search_space().validate().map_err(CliError::config)?;
    let graph = load_graph(cfg)?;
    prepare_output(cfg)?;
    let split = make_split(
        graph.num_nodes,
        (cfg.split.train, cfg.split.val, cfg.split.test),
        cfg.split.seed,
    )
    .map_err(CliError::config)?;
    let result = random_search(
        &graph,
        &split,
        &cfg.walk_config(),
        &cfg.model_config(graph.feature_dim(), graph.num_classes),
        &cfg.train_config(),
        &cfg.search_space(),
        cfg.search.seed,
    )
    .map_err(CliError::runtime)?;
    write_trial_csv(&cfg.data.output_dir.join("trials.csv"), &result.trials)
        .map_err(CliError::runtime)?;
    let b = &result.best;
    println!("trials: {}", result.trials.len());
    println!(
        "best: trial {} val_acc {} test_acc {} (lr {}, weight_decay {}, dropout {}, hidden {}, layers {}, eps {}, rw_hops {}, pool {})",
        b.index, b.val_acc, b.test_acc, b.lr, b.weight_decay, b.dropout, b.hidden, b.num_layers,
        b.eps, b.rw_hops, b.alter_pool
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    validate_for_run(cfg, true)?;
    // Self-contained check: a small synthetic graph stands in for data so
    // the command runs with no dataset files.
    let mut spec = cfg.synth_spec();
    spec.num_nodes = spec.num_nodes.min(60);
    let graph = synth_graph(&spec).map_err(CliError::config)?;
    let mut wc = cfg.walk_config();
    wc.rw_hops = wc.rw_hops.min(8);
    wc.max_steps = 16 * wc.rw_hops;
    let corpus = sample_dataset_with_workers(&graph, &wc, 1).map_err(CliError::runtime)?;
    let model_config = cfg.model_config(graph.feature_dim(), graph.num_classes);
    prepare_output(cfg)?;

    let mut rng = stream_rng(cfg.train.seed, StreamKind::GradCheck, 0, 0);
    let mut worst = 0.0f64;
    for instance in 0..5 {
        let params =
            init_params(&model_config, cfg.train.seed + instance).map_err(CliError::runtime)?;
        let n = params.num_scalars();
        let coords: Vec<usize> = {
            use rand::Rng;
            (0..50).map(|_| rng.random_range(0..n)).collect()
        };
        let item = &corpus.items[(instance as usize * 7) % corpus.items.len()];
        let report = end_to_end_grad_check(
            &item.samples[0],
            &model_config,
            &params,
            &coords,
            DEFAULT_FD_EPS,
        )
        .map_err(CliError::runtime)?;
        println!("instance {instance}: max rel err {}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);
    }
    println!("max rel err overall: {worst}");
    if worst < 1e-3 {
        Ok(())
    } else {
        Err(CliError::runtime(format!("gradient check failed: max rel err {worst} >= 1e-3")))
    }
}
