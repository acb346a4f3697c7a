//! Black-box tests of the binary: exit codes, file outputs, and the
//! synth → ingest → sample → train → eval pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subgnd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Writes a tiny synthetic dataset into `dir` and returns the `--set`
/// arguments pointing a later subcommand at it.
fn synth_tiny(dir: &Path) -> Vec<String> {
    let out = run(&[
        "synth",
        "--set",
        &format!("data.output_dir={}", dir.display()),
        "--set",
        "synth.num_nodes=24",
        "--set",
        "synth.feature_dim=4",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    data_args(dir)
}

fn data_args(dir: &Path) -> Vec<String> {
    vec![
        "--set".into(),
        format!("data.edges={}", dir.join("edges.tsv").display()),
        "--set".into(),
        format!("data.features={}", dir.join("features.csv").display()),
        "--set".into(),
        format!("data.labels={}", dir.join("labels.txt").display()),
    ]
}

fn fast_train_args(out_dir: &Path) -> Vec<String> {
    vec![
        "--set".into(),
        format!("data.output_dir={}", out_dir.display()),
        "--set".into(),
        "walk.rw_hops=4".into(),
        "--set".into(),
        "model.hidden=4".into(),
        "--set".into(),
        "train.max_epochs=3".into(),
    ]
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let out = run(&["train", "--set", "walk.bogus=3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("walk.bogus"), "{}", stderr(&out));
}

#[test]
fn malformed_set_exits_2() {
    let out = run(&["train", "--set", "no-equals-here"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_key_in_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "trian.lr = 0.1\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("trian.lr"), "{}", stderr(&out));
}

#[test]
fn missing_dataset_paths_exit_2() {
    let out = run(&["train"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.edges"), "{}", stderr(&out));
}

#[test]
fn invalid_hyperparameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(synth_tiny(dir.path()));
    args.extend(["--set".into(), "train.lr=-1".into()]);
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn missing_dataset_file_exits_1() {
    let out = run(&[
        "ingest",
        "--set",
        "data.edges=/nonexistent/e.tsv",
        "--set",
        "data.features=/nonexistent/f.csv",
        "--set",
        "data.labels=/nonexistent/l.txt",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_checkpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("broken.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let mut args: Vec<String> =
        vec!["eval".into(), "--checkpoint".into(), ckpt.display().to_string()];
    args.extend(synth_tiny(dir.path()));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
}

#[test]
fn pipeline_synth_ingest_sample_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());

    let mut args: Vec<String> = vec!["ingest".into()];
    args.extend(data.clone());
    args.extend(["--set".into(), format!("data.output_dir={}", dir.path().display())]);
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("nodes: 24"), "{}", stdout(&out));

    let mut args: Vec<String> = vec!["sample".into()];
    args.extend(data.clone());
    args.extend(fast_train_args(dir.path()));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("size histogram"), "{}", stdout(&out));
    assert!(dir.path().join("corpus.txt").exists());

    let mut args: Vec<String> = vec!["train".into()];
    args.extend(data.clone());
    args.extend(fast_train_args(dir.path()));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("test_acc:"), "{}", stdout(&out));
    assert!(dir.path().join("metrics.csv").exists());
    assert!(dir.path().join("checkpoint.ckpt").exists());
    assert!(dir.path().join("run.manifest").exists());

    let mut args: Vec<String> = vec!["eval".into()];
    args.extend(data);
    args.extend(fast_train_args(dir.path()));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("test_acc:"), "{}", stdout(&out));
}

#[test]
fn manifest_rerun_reproduces_metrics_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());

    let mut args: Vec<String> = vec!["train".into()];
    args.extend(data);
    args.extend(fast_train_args(dir.path()));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let metrics_1 = std::fs::read(dir.path().join("metrics.csv")).unwrap();
    let manifest_1 = std::fs::read(dir.path().join("run.manifest")).unwrap();

    // Re-run purely from the manifest.
    let out =
        bin().args(["train", "--config"]).arg(dir.path().join("run.manifest")).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let metrics_2 = std::fs::read(dir.path().join("metrics.csv")).unwrap();
    let manifest_2 = std::fs::read(dir.path().join("run.manifest")).unwrap();
    assert_eq!(metrics_1, metrics_2);
    assert_eq!(manifest_1, manifest_2);
}

#[test]
fn search_writes_trials_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let mut args: Vec<String> = vec!["search".into()];
    args.extend(data);
    args.extend(fast_train_args(dir.path()));
    args.extend([
        "--set".into(),
        "search.budget=2".into(),
        "--set".into(),
        "search.hidden=4".into(),
        "--set".into(),
        "search.rw_hops=2,4".into(),
        "--set".into(),
        "search.num_layers=1".into(),
    ]);
    let out = bin().args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("best: trial"), "{}", stdout(&out));
    let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
}

#[test]
fn gradcheck_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gradcheck",
        "--set",
        &format!("data.output_dir={}", dir.path().display()),
        "--set",
        "model.hidden=8",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max rel err overall"), "{text}");
    let worst: f64 = text.lines().last().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn conflict_fixture_kind_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--kind",
        "conflict_fixture",
        "--pairs",
        "4",
        "--set",
        &format!("data.output_dir={}", dir.path().display()),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    // Each pair contributes two 2-node components.
    let labels = std::fs::read_to_string(dir.path().join("labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 16);
    let manifest = std::fs::read_to_string(dir.path().join("run.manifest")).unwrap();
    assert!(manifest.contains("synth.kind = conflict_fixture"), "{manifest}");
    assert!(manifest.contains("synth.pairs = 4"), "{manifest}");
}
