//! Contract tests for the command-line surface: exit codes, stdout shapes,
//! manifest sidecars, and render determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use bike8d::metrics::{oracle_predictions, save_predictions};
use bike8d::synth::read_records;

const BIN: &str = env!("CARGO_BIN_EXE_bike8d");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn bike8d")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny deterministic dataset: 2 templates x 4 samples.
fn tiny_dataset(dir: &Path) -> PathBuf {
    let config = dir.join("tiny.toml");
    std::fs::write(
        &config,
        "[dataset]\nn_templates = 2\nsamples_per_template = 4\nresidual_sigma = 0.0\nseed = 9\n",
    )
    .unwrap();
    let data = dir.join("tiny.jsonl");
    let out = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    data
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = run(&[flag]);
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
    let out = run(&["fit", "--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    // unknown flag
    let out = run(&["generate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    // config with an unknown key, reported with the offending path
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[dataset]\nnot_a_field = 3\n").unwrap();
    let out = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("x.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("bad.toml"), "{}", stderr_of(&out));

    // invalid flag value
    let out = run(&["fit", "--data", "d", "--out", "o", "--noise-px", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = tiny_dataset(dir.path());

    // missing input file
    let out = run(&[
        "fit",
        "--data",
        dir.path().join("absent.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("p.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // a dataset is not a prediction file; the parse error carries a line number
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--preds",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // unknown sample id for render
    let out = run(&[
        "render",
        "--data",
        data.to_str().unwrap(),
        "--sample-id",
        "s999999",
        "--out",
        dir.path().join("img.png").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("s999999"));
}

#[test]
fn eval_lists_missing_prediction_ids() {
    let dir = TempDir::new().unwrap();
    let data = tiny_dataset(dir.path());
    let (_, records) = read_records(&data).unwrap();
    let mut preds = oracle_predictions(&records);
    preds.remove(2);
    preds.remove(0);
    let preds_path = dir.path().join("partial.jsonl");
    save_predictions(&preds_path, &preds).unwrap();

    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--preds",
        preds_path.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(
        err.contains("missing predictions") && err.contains(&records[0].sample_id),
        "{err}"
    );
}

#[test]
fn generate_prints_split_counts_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let data = tiny_dataset(dir.path());
    let manifest_path = dir.path().join("tiny.jsonl.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["config"]["dataset"]["seed"], 9);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(
        manifest["outputs"][0].as_str().unwrap(),
        data.to_str().unwrap()
    );

    // count line re-checked on a fresh run to a second path
    let out = run(&[
        "generate",
        "--config",
        dir.path().join("tiny.toml").to_str().unwrap(),
        "--out",
        dir.path().join("b.jsonl").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("8 records (6 train / 2 val)"), "{stdout}");
}

#[test]
fn oracle_check_passes_then_fails_negative_control() {
    let out = run(&[
        "oracle-check",
        "--draws",
        "200",
        "--pairs",
        "20",
        "--mc-samples",
        "20000",
        "--grad-points",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    // an absurdly tight overlap tolerance must trip the estimator comparison
    let out = run(&[
        "oracle-check",
        "--draws",
        "50",
        "--pairs",
        "20",
        "--mc-samples",
        "20000",
        "--grad-points",
        "10",
        "--iou-tol",
        "0.0001",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
}

#[test]
fn render_is_pixel_identical_for_a_perfect_prediction() {
    let dir = TempDir::new().unwrap();
    let data = tiny_dataset(dir.path());
    let (_, records) = read_records(&data).unwrap();
    let preds_path = dir.path().join("oracle.jsonl");
    save_predictions(&preds_path, &oracle_predictions(&records)).unwrap();
    let id = records[3].sample_id.clone();

    let gt_png = dir.path().join("gt.png");
    let out = run(&[
        "render",
        "--data",
        data.to_str().unwrap(),
        "--sample-id",
        &id,
        "--out",
        gt_png.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let pred_png = dir.path().join("pred.png");
    let out = run(&[
        "render",
        "--data",
        data.to_str().unwrap(),
        "--preds",
        preds_path.to_str().unwrap(),
        "--sample-id",
        &id,
        "--out",
        pred_png.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let a = std::fs::read(&gt_png).unwrap();
    let b = std::fs::read(&pred_png).unwrap();
    assert!(!a.is_empty() && a == b, "ground truth and perfect prediction must render identically");
}

#[test]
fn fit_writes_manifest_and_prediction_count() {
    let dir = TempDir::new().unwrap();
    let data = tiny_dataset(dir.path());
    let preds = dir.path().join("p.jsonl");
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
        "--yaw-starts",
        "8",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fit 8/8 samples"), "{stdout}");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("p.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["config"]["solver"]["yaw_starts"], 8);
    assert_eq!(manifest["inputs"][0].as_str().unwrap(), data.to_str().unwrap());
}
