mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vlcurate::manifest::TaskCategory;
use vlcurate::scoring::{self, AxisScores, ComplexityReport, ScoringSnapshot, WeightVector, WeightsTable};

fn vlcurate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlcurate")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report_file(dir: &Path, name: &str, axes: (f64, f64, f64)) -> PathBuf {
    let report = ComplexityReport {
        dataset: name.into(),
        category: Some(TaskCategory::Caption),
        n_samples: 5,
        raw: Default::default(),
        normalized: Default::default(),
        axes: AxisScores { text: Some(axes.0), image: Some(axes.1), task: Some(axes.2) },
        weights: WeightVector::UNIFORM,
        score: 0.0,
        omissions: vec![],
        warnings: vec![],
        config: ScoringSnapshot {
            beta: 1.2,
            delta: 0.5,
            delta_on_raw_large_loss: false,
            normalization: Default::default(),
            perplexity_fallback: Default::default(),
            batch_size: 5,
        },
    };
    let path = dir.join(format!("{name}.report.json"));
    fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    path
}

#[test]
fn plan_tiles_table_and_json() {
    let o = vlcurate(&["plan-tiles", "--width", "940", "--height", "479"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("940\t479\tmagicvl\t928x480\t6\t435"), "{text}");
    assert!(text.contains("1536x768"));

    let o = vlcurate(&["plan-tiles", "--width", "940", "--height", "479", "--scheme", "magicvl", "--json"]);
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["totals"]["magicvl"], 435);
    assert!(doc["totals"].get("fixed_width_grid").is_none());
}

#[test]
fn plan_tiles_edge_inputs() {
    let o = vlcurate(&["plan-tiles", "--width", "384", "--height", "384", "--scheme", "magicvl"]);
    assert!(stdout(&o).contains("384\t384\tmagicvl\t384x384\t1\t144"));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let o = vlcurate(&["plan-tiles", "--input", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("width\theight\tscheme"));
}

#[test]
fn plan_tiles_from_size_file() {
    let dir = tempfile::tempdir().unwrap();
    let sizes = dir.path().join("sizes.txt");
    fs::write(&sizes, "940 479\n384,384\n").unwrap();
    let out = dir.path().join("out");
    let o = vlcurate(&["plan-tiles", "--input", sizes.to_str().unwrap(), "--json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&fs::read(out.join("plan_tiles.json")).unwrap()).unwrap();
    assert_eq!(doc["command"], "plan-tiles");
    assert_eq!(doc["result"]["images"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(vlcurate(&["plan-tiles"]).status.code(), Some(2));
    assert_eq!(vlcurate(&["score", "--manifest", "/no/such/file.jsonl"]).status.code(), Some(2));
    assert_eq!(vlcurate(&["plan-tiles", "--input", "/no/such/sizes.txt"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    let o = vlcurate(&["score", "--manifest", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn calibrate_updates_weights() {
    let dir = tempfile::tempdir().unwrap();
    let subsets: Vec<String> = (0..5)
        .map(|i| {
            let p = report_file(dir.path(), &format!("r{i}"), (0.5, 0.5, 0.1 + 0.2 * i as f64));
            format!("{}={}", i + 1, p.display())
        })
        .collect();
    let weights = dir.path().join("weights.toml");
    let mut args = vec!["calibrate", "--category", "caption", "--weights", weights.to_str().unwrap()];
    for s in &subsets {
        args.extend(["--subset", s.as_str()]);
    }
    let o = vlcurate(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = WeightsTable::load(&weights).unwrap();
    let entry = &table.entries[&TaskCategory::Caption];
    assert_eq!((entry.lambda_text, entry.lambda_image, entry.lambda_task), (0.0, 0.0, 1.0));
    assert_eq!(entry.feasible, Some(true));

    let o = vlcurate(&args[..args.len() - 2]);
    assert_eq!(o.status.code(), Some(1), "four subsets must be rejected");

    let before = fs::read(&weights).unwrap();
    let mut strict = args.clone();
    strict.extend(["--category", "ocr", "--min-margin", "0.5"]);
    strict.remove(2);
    strict.remove(1);
    let o = vlcurate(&strict);
    assert_eq!(o.status.code(), Some(1), "margin 0.2 must fail a 0.5 floor");
    assert_eq!(fs::read(&weights).unwrap(), before);
}

#[test]
fn calibrate_reports_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let subsets: Vec<String> = (0..5)
        .map(|i| format!("{}={}", i + 1, report_file(dir.path(), &format!("r{i}"), (0.4, 0.4, 0.4)).display()))
        .collect();
    let weights = dir.path().join("w.toml");
    let mut args = vec!["calibrate", "--category", "ocr", "--weights", weights.to_str().unwrap()];
    for s in &subsets {
        args.extend(["--subset", s.as_str()]);
    }
    let o = vlcurate(&args);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let table = WeightsTable::load(&weights).unwrap();
    assert_eq!(table.entries[&TaskCategory::Ocr].feasible, Some(false));
}

#[test]
fn score_and_report_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path());
    let out = dir.path().join("out");
    let mut args = vec!["score", "--sidecar", corpus.sidecar.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for m in &corpus.manifests {
        args.extend(["--manifest", m.to_str().unwrap()]);
    }
    let o = vlcurate(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (report, run) = vlcurate::cli::read_report(&out.join("score/docs_forms.report.json")).unwrap();
    assert_eq!(report.n_samples, 12);
    assert!(run.is_some());
    assert!(report.axes.task.is_some());

    let o = vlcurate(&["report", "--input", out.join("score").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["caption_plain", "caption_dense", "docs_receipts", "docs_forms"] {
        assert!(text.contains(name), "{name} missing from report");
    }
}

#[test]
fn schedule_needs_caption_data() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path());
    let out = dir.path().join("out");
    let mut args = vec!["schedule", "--sidecar", corpus.sidecar.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for m in corpus.manifests.iter().filter(|m| m.to_string_lossy().contains("docs_")) {
        args.extend(["--manifest", m.to_str().unwrap()]);
    }
    let o = vlcurate(&args);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn schedule_scales_budgets_and_keeps_freeze_flags() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path());
    let out = dir.path().join("out");
    let mut args =
        vec!["schedule", "--sidecar", corpus.sidecar.to_str().unwrap(), "--out", out.to_str().unwrap(), "--scale", "1e-5"];
    for m in &corpus.manifests {
        args.extend(["--manifest", m.to_str().unwrap()]);
    }
    let o = vlcurate(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&fs::read(out.join("schedule/training_config.json")).unwrap()).unwrap();
    assert!(doc["plan"]["run_config"]["seed"].is_u64());
    let stages = doc["plan"]["stages"].as_array().unwrap();
    let budgets: Vec<u64> = stages.iter().map(|s| s["sample_budget"].as_u64().unwrap()).collect();
    assert_eq!(budgets, [100, 230, 540, 660]);
    assert_eq!(stages[0]["trainable"], serde_json::json!(["projector"]));
    assert_eq!(stages[3]["trainable"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_image_annotation_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path());
    let weights = dir.path().join("weights.toml");
    let mut table = WeightsTable::default();
    table.entries.insert(
        TaskCategory::Caption,
        scoring::WeightEntry {
            lambda_text: 0.2,
            lambda_image: 0.6,
            lambda_task: 0.2,
            feasible: None,
            min_margin: None,
            kendall_tau: None,
            grid_step: None,
        },
    );
    table.save(&weights).unwrap();
    // no sidecar, so OCR and object counts are absent while the image axis carries weight
    let o = vlcurate(&[
        "score",
        "--manifest",
        corpus.manifests[0].to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
