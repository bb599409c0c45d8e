use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bridgematch::cli::ExperimentConfig;
use bridgematch::{Checkpoint, MlpModel, RngStream};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "dataset": {"kind": "cross_mixture"},
  "train": {"cond_alpha": 0.0, "steps": 30, "batch_size": 16, "sigma": 1.0},
  "sampler": {"num_steps": 10, "integrator": "bridge_posterior"},
  "model": {"hidden": [8, 8], "activation": "silu", "time_features": 2},
  "seed": 5,
  "eval": {"n": 20, "paths": 3}
}"#;

fn bm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bm"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn bm")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "bm failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn with_steps(text: &str, steps: usize) -> String {
    text.replace("\"steps\": 30", &format!("\"steps\": {steps}"))
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_training_steps_writes_the_initial_model() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "c.json", &with_steps(SMALL, 0));
    ok(&bm(dir.path(), &["train", "--config", arg(&cfg_path)]));
    let written = fs::read_to_string(dir.path().join("model.ckpt")).unwrap();

    let cfg = ExperimentConfig::from_json(&with_steps(SMALL, 0)).unwrap();
    let mut init_stream = RngStream::new(5).split(0).split(0);
    let model = MlpModel::from_architecture(&cfg.model, 2, cfg.train.cond_mode(), &mut init_stream).unwrap();
    let expected = Checkpoint {
        model,
        sigma: 1.0,
        seed: 5,
    }
    .to_text();
    assert_eq!(written, expected);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&bm(&out, &["train", "--config", arg(&cfg)]));
        ok(&bm(&out, &["sample", "--config", arg(&cfg)]));
        let files: Vec<Vec<u8>> = ["model.ckpt", "loss.csv", "endpoints.csv", "trajectories.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&bm(&a, &["train", "--config", arg(&cfg)]));
    ok(&bm(&b, &["--seed", "6", "train", "--config", arg(&cfg)]));
    assert_ne!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_usage_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"train": {"cond_alpha": 0.0, "steps": 1, "batch_size": 4, "sigma": 1.0}}"#;
    let cfg = write_config(dir.path(), "c.json", text);
    let out = bm(dir.path(), &["train", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset"));
}

#[test]
fn checkpoint_dimension_mismatch_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    ok(&bm(dir.path(), &["train", "--config", arg(&cfg)]));
    let scalar = SMALL.replace(
        r#"{"kind": "cross_mixture"}"#,
        r#"{"kind": "gaussian_corr", "alpha": 0.5}"#,
    );
    let cfg1 = write_config(dir.path(), "g.json", &scalar);
    let out = bm(dir.path(), &["sample", "--config", arg(&cfg1)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim"));
}

#[test]
fn single_path_has_one_row_per_grid_point_and_snapshot_at_one_is_terminal() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    ok(&bm(dir.path(), &["train", "--config", arg(&cfg)]));
    ok(&bm(
        dir.path(),
        &[
            "sample",
            "--config",
            arg(&cfg),
            "--n",
            "1",
            "--paths",
            "1",
            "--snapshots",
            "0.5,1",
        ],
    ));
    let traj = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 11);
    let ends = fs::read_to_string(dir.path().join("endpoints.csv")).unwrap();
    let x1: Vec<f64> = ends
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(3)
        .map(|v| v.parse().unwrap())
        .collect();
    let snap = fs::read_to_string(dir.path().join("snapshot_t1.csv")).unwrap();
    let pred: Vec<f64> = snap
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(4)
        .map(|v| v.parse().unwrap())
        .collect();
    let last: Vec<f64> = traj
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(3)
        .take(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(last, x1);
    assert_eq!(pred, x1);
    assert!(dir.path().join("snapshot_t0.5.csv").exists());
}

#[test]
fn gaussian_table_has_nineteen_increasing_rows() {
    let dir = TempDir::new().unwrap();
    ok(&bm(dir.path(), &["gaussian", "--sigma", "1"]));
    let text = fs::read_to_string(dir.path().join("gaussian.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 19);
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1]));
    let star = rows[0][2];
    assert!((star - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-9);
}

#[test]
fn header_only_csv_plots_to_an_empty_svg() {
    let dir = TempDir::new().unwrap();
    let ends = write_config(dir.path(), "e.csv", "path_id,x0_0,x0_1,x1_0,x1_1\n");
    let out = dir.path().join("p.svg");
    ok(&bm(
        dir.path(),
        &["plot", "--endpoints", arg(&ends), "--out", arg(&out)],
    ));
    let svg = fs::read_to_string(out).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn eval_on_the_identity_coupling_scores_perfect_pairing() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace(
        r#"{"kind": "cross_mixture"}"#,
        r#"{"kind": "entropic_shift", "k": 0.0}"#,
    );
    let cfg = write_config(dir.path(), "c.json", &text);
    let mut csv = String::from("path_id,x0_0,x0_1,x1_0,x1_1\n");
    let mut r = RngStream::new(1);
    for i in 0..40 {
        let cx = if i % 2 == 0 { 2.0 } else { -2.0 };
        let cy = if i % 4 < 2 { 2.0 } else { -2.0 };
        let (x, y) = (cx + 0.3 * r.standard_normal(), cy + 0.3 * r.standard_normal());
        csv.push_str(&format!("{i},{x},{y},{x},{y}\n"));
    }
    let ends = write_config(dir.path(), "e.csv", &csv);
    let out = bm(dir.path(), &["eval", "--config", arg(&cfg), "--endpoints", arg(&ends)]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l == "pairing_accuracy=1"), "{stdout}");
    assert!(stdout.lines().any(|l| l == "endpoint_mse=0"), "{stdout}");
}

#[test]
fn malformed_csv_reports_the_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let ends = write_config(
        dir.path(),
        "e.csv",
        "path_id,x0_0,x0_1,x1_0,x1_1\n0,1,2,3,4\n1,1,oops,3,4\n",
    );
    let out = bm(dir.path(), &["eval", "--config", arg(&cfg), "--endpoints", arg(&ends)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("row 2"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn diverging_training_exits_with_the_numerical_code() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace(r#""sigma": 1.0}"#, r#""sigma": 1.0, "adam": {"lr": 1e300}}"#);
    let cfg = write_config(dir.path(), "c.json", &text);
    let out = bm(dir.path(), &["train", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(bm(dir.path(), &["frobnicate"]).status.code(), Some(2));
}
