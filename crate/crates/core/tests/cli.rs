//! End-to-end runs of the command-line entry point on a tiny task.

use std::fs;
use std::path::Path;

use fedsilo::data::{EvalSplitSpec, SyntheticSpec};
use fedsilo::federation::{Mode, TrainingConfig};
use fedsilo::harness::{run_cli, DataSource, ExperimentConfig, SweepAxes};

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        training: TrainingConfig {
            clients: 3,
            epochs: 2,
            rounds: 3,
            hidden: vec![8],
            ..TrainingConfig::default()
        },
        data: DataSource::Synthetic {
            spec: SyntheticSpec {
                dim: 4,
                classes: 3,
                client_sizes: vec![60, 90, 30],
                domain_tags: Vec::new(),
                eval_size: 40,
                eval_splits: vec![
                    EvalSplitSpec { name: "a".into(), client: 0, variant: None },
                    EvalSplitSpec { name: "b".into(), client: 2, variant: Some(0.3) },
                ],
                ..SyntheticSpec::default()
            },
        },
        out_dir: out.to_path_buf(),
        sweep: SweepAxes {
            global_lr: vec![0.9, 1.0],
            rounds: vec![3],
            ..SweepAxes::default()
        },
    }
}

fn write_config(dir: &Path, exp: &ExperimentConfig) -> String {
    let p = dir.join("config.json");
    fs::write(&p, exp.to_json().unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("fedsilo").chain(args.iter().copied()))
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &tiny(&out));
    assert_eq!(cli(&["train", "--config", &cfg, "--mode", "caft", "--quiet"]), 0);
    for f in ["checkpoint.flam", "metrics.jsonl", "summary.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 6);
    assert_eq!(cli(&["eval", "--config", &cfg, "--quiet"]), 0);
    let scores: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert!(scores.to_string().contains("\"a\""));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &tiny(&out));
    assert_eq!(cli(&["sweep", "--config", &cfg, "--quiet"]), 0);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn gen_data_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let cfg = write_config(dir.path(), &tiny(&out));
    assert_eq!(cli(&["gen-data", "--config", &cfg, "--quiet"]), 0);
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n == "metadata.json"));
    assert_eq!(names.iter().filter(|n| n.starts_with("client")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.starts_with("eval_")).count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["train", "--config", "/no/such/file.json"]), 1);

    let mut bad = tiny(&out);
    bad.training.global_lr = 0.0;
    let cfg = write_config(dir.path(), &bad);
    assert_eq!(cli(&["train", "--config", &cfg, "--quiet"]), 1);

    let mut diverging = tiny(&out);
    diverging.training.local_lr = 1e308;
    diverging.training.mode = Mode::FedAvg;
    let cfg = write_config(dir.path(), &diverging);
    assert_eq!(cli(&["train", "--config", &cfg, "--quiet"]), 2);
}
