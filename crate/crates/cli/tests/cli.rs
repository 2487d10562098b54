use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskxai"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let mut all = vec!["--format", "json"];
    all.extend_from_slice(args);
    let out = run(&all);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

struct Files {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small cohort and model made by the binary itself.
fn files() -> &'static Files {
    static F: OnceLock<Files> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("cohort.csv");
        let model = dir.path().join("model.json");
        ok_json(&["--seed", "3", "synth", "--n", "800", "--out", p(&data)]);
        ok_json(&[
            "--seed", "4", "train", "--data", p(&data), "--out", p(&model), "--trees", "12", "--max-depth", "6",
        ]);
        Files {
            _dir: dir,
            data,
            model,
        }
    })
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let ja = ok_json(&["--seed", "9", "synth", "--n", "50", "--out", p(&a)]);
    let jb = ok_json(&["--seed", "9", "synth", "--n", "50", "--out", p(&b)]);
    let jc = ok_json(&["--seed", "10", "synth", "--n", "50", "--out", p(&c)]);
    assert_eq!(ja["records"], 50);
    assert_eq!(ja["fingerprint"], jb["fingerprint"]);
    assert_ne!(ja["fingerprint"], jc["fingerprint"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn evaluate_reports_every_outcome() {
    let f = files();
    let v = ok_json(&["evaluate", "--model", p(&f.model), "--data", p(&f.data)]);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for r in rows {
        let auc = r["auroc"].as_f64().unwrap();
        assert!(auc > 0.5 && auc <= 1.0, "{r}");
    }
}

#[test]
fn explain_both_methods() {
    let f = files();
    let base = ["--model", p(&f.model), "--data", p(&f.data), "--record", "p00010", "--outcome", "aki"];
    let mut shap = vec!["explain", "shap"];
    shap.extend_from_slice(&base);
    let s = ok_json(&shap);
    assert_eq!(s["method"], "SHAP");
    assert!(s["contributions"].as_array().unwrap().len() <= 10);

    let mut lime = vec!["--seed", "5", "explain", "lime", "--samples", "500", "--top-k", "4"];
    lime.extend_from_slice(&base);
    let l1 = ok_json(&lime);
    let l2 = ok_json(&lime);
    assert_eq!(l1, l2);
    assert_eq!(l1["contributions"].as_array().unwrap().len(), 4);
    assert_eq!(l1["prediction"], s["prediction"]);
}

#[test]
fn counterfactual_and_similar() {
    let f = files();
    let v = ok_json(&[
        "counterfactual", "--model", p(&f.model), "--data", p(&f.data), "--record", "p00001", "--threshold", "0.3",
        "--budget", "1500",
    ]);
    let risk = v["original_risk"].as_f64().unwrap();
    let expected = if risk >= 0.3 { "decrease" } else { "increase" };
    assert_eq!(v["direction"], expected);
    assert!(v["results"].as_array().unwrap().len() <= 3);

    let s = ok_json(&["similar", "--model", p(&f.model), "--data", p(&f.data), "--record", "p00001"]);
    assert!(s["matched"].as_u64().is_some());
}

#[test]
fn card_renders_to_file() {
    let f = files();
    let dir = tempfile::tempdir().unwrap();
    let html = dir.path().join("card.html");
    let out = run(&[
        "card", "--model", p(&f.model), "--dev", p(&f.data), "--val", p(&f.data), "--render", "html", "--out",
        p(&html),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&html).unwrap();
    assert!(text.starts_with("<!DOCTYPE html>") || text.contains("<html"));
    assert!(text.contains("model-card-data"));
}

#[test]
fn failures_print_the_envelope_and_exit_nonzero() {
    let f = files();
    let out = run(&["explain", "shap", "--model", p(&f.model), "--data", p(&f.data), "--record", "nobody"]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("envelope on stderr");
    assert_eq!(v["error"]["code"], "unknown_record");
    assert!(out.stdout.is_empty());

    let out = run(&["evaluate", "--model", "/nonexistent/model.json", "--data", p(&f.data)]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["code"], "io_error");
}

#[test]
fn text_output_is_readable() {
    let f = files();
    let out = run(&["evaluate", "--model", p(&f.model), "--data", p(&f.data)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("prolonged_mv"));
    assert!(text.contains("AUROC"));
}
