use std::path::Path;
use std::process::{Command, Output};

use anne::dataset::save_predictions;
use anne::experiment::{load_manifest, SelectionReport};
use anne::prelude::*;

const SMALL: &[&str] = &["--set", "data.spec.samples_per_class=40", "--set", "data.test_per_class=20", "--set", "data.spec.dim=16"];

fn anne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anne")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen(dir: &Path, seed: &str) -> Output {
    let mut args = vec!["gen", "--preset", "bench-sym20", "--seed", seed, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    anne(&args)
}

#[test]
fn gen_writes_files_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gen(tmp.path(), "3");
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("seed-3");
    let manifest = load_manifest(run.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 3);
    assert_eq!(manifest.train_len, 400);
    assert_eq!(manifest.test_len, 200);
    assert_eq!(manifest.noisy_fraction, Some(0.2));
    let train = load_dataset(run.join(&manifest.train_file)).unwrap();
    assert_eq!((train.len(), train.dim(), train.class_count()), (400, 16, 10));

    let again = tempfile::tempdir().unwrap();
    assert!(gen(again.path(), "3").status.success());
    for f in ["train.anne", "test.anne"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(again.path().join("seed-3").join(f)).unwrap());
    }
}

#[test]
fn invalid_noise_kind_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anne(&["gen", "--out", tmp.path().to_str().unwrap(), "--set", "noise.kind=bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("noise.kind"), "{}", stderr(&out));
}

#[test]
fn unknown_preset_and_missing_config_file() {
    assert_eq!(anne(&["gen", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(anne(&["train", "--config", "/nonexistent/x.json"]).status.code(), Some(2));
}

fn select_fixture(dir: &Path) -> (String, String) {
    assert!(gen(dir, "1").status.success());
    let ds_path = dir.join("seed-1/train.anne");
    let ds = load_dataset(&ds_path).unwrap();
    // confident on the given label for every third sample, diffuse elsewhere
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| {
            let y = ds.noisy_labels()[i] as usize;
            let hi = if i % 3 == 0 { 0.95 } else { 0.4 };
            (0..10).map(|k| if k == y { hi } else { (1.0 - hi) / 9.0 }).collect()
        })
        .collect();
    let preds_path = dir.join("preds.json");
    save_predictions(&Predictions::from_rows(&rows, 0).unwrap(), &preds_path).unwrap();
    (ds_path.to_str().unwrap().to_string(), preds_path.to_str().unwrap().to_string())
}

#[test]
fn select_partitions_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, preds) = select_fixture(tmp.path());
    let report_path = tmp.path().join("report.json");
    let out = anne(&["select", "--dataset", &ds, "--preds", &preds, "--out", report_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: SelectionReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.n, 400);
    assert_eq!(report.clean + report.noisy, 400);
    assert_eq!(report.hcs + report.lcs1 + report.lcs2, 400);
    assert_eq!(report.clean_indices.len(), report.clean);
    assert!(report.metrics.is_some());

    let out = anne(&["select", "--dataset", &ds, "--preds", &preds, "--selector", "fixed_knn", "--K", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: SelectionReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.provenance.keys().collect::<Vec<_>>(), ["fixed_knn"]);
    assert_eq!(report.provenance["fixed_knn"], 400);
}

#[test]
fn select_rejects_misaligned_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, _) = select_fixture(tmp.path());
    let short = tmp.path().join("short.json");
    save_predictions(&Predictions::uniform(399, 10, 0), &short).unwrap();
    let out = anne(&["select", "--dataset", &ds, "--preds", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn unreadable_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.anne");
    std::fs::write(&bad, b"not a dataset").unwrap();
    let out = anne(&["eval", "--model", bad.to_str().unwrap(), "--dataset", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let mut args = vec!["train", "--preset", "bench-sym20", "--seed", "2", "--out", dir, "--set", "train.epochs=4", "--set", "train.warmup_epochs=2"];
    args.extend_from_slice(SMALL);
    let out = anne(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("seed-2");
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);

    assert!(gen(tmp.path(), "2").status.success());
    let out = anne(&[
        "eval",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--dataset",
        run.join("test.anne").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    let trained: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(acc, trained["final_accuracy"].as_f64().unwrap());
}

#[test]
fn compare_writes_a_ranked_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let mut args = vec![
        "compare", "--preset", "bench-sym20", "--out", dir, "--selectors", "anne,fine_only", "--set", "seeds=[1,2]",
        "--set", "compare_mode=\"select\"", "--set", "train.warmup_epochs=2",
    ];
    args.extend_from_slice(SMALL);
    let out = anne(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("compare.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let ranks: f64 = rows.iter().map(|r| r["mean_rank"].as_f64().unwrap()).sum();
    assert!((ranks - 3.0).abs() < 1e-12);
    let csv = std::fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let bad = anne(&["compare", "--selectors", "anne,nonsense"]);
    assert_ne!(bad.status.code(), Some(0));
}
