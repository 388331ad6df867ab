use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cabs_core::corpus::CaseRecord;
use cabs_core::render::{render_report, Phrasing};
use cabs_core::synthetic::{synthetic_corpus, SyntheticConfig};
use serde_json::Value;

fn cabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabs"))
        .args(args)
        .env_remove("CABS_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_cases(dir: &Path, cases: &[CaseRecord]) -> PathBuf {
    let path = dir.join("cases.jsonl");
    let body: String = cases.iter().map(|c| serde_json::to_string(c).unwrap() + "\n").collect();
    std::fs::write(&path, body).unwrap();
    path
}

fn synthetic_cases(n: usize, seed: u64) -> Vec<CaseRecord> {
    synthetic_corpus(n, seed, &SyntheticConfig::default())
        .into_iter()
        .enumerate()
        .map(|(i, d)| CaseRecord {
            case_id: format!("case-{i:03}"),
            pred_report: Some(render_report(&d, Phrasing::Varied(i as u64))),
            gt_units: Some(d),
            ..Default::default()
        })
        .collect()
}

fn stderr_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).expect("stderr line is JSON")
}

#[test]
fn eval_self_match_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_cases(dir.path(), &synthetic_cases(50, 11));
    let out = cabs(&["eval", "--input", input.to_str().unwrap(), "--jobs", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["aggregate"]["f1"].as_f64().unwrap() - 1.0).abs() < 1e-7);
    let ids: Vec<&str> = v["cases"].as_array().unwrap().iter().map(|c| c["case_id"].as_str().unwrap()).collect();
    let expected: Vec<String> = (0..50).map(|i| format!("case-{i:03}")).collect();
    assert_eq!(ids, expected);

    let csv = dir.path().join("metrics.csv");
    let out = cabs(&["eval", "--input", input.to_str().unwrap(), "--output", csv.to_str().unwrap(), "--averaging", "micro"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("case_id,precision,"));
    assert_eq!(text.lines().count(), 52);
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "aggregate");
    assert!((last[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-7);
}

#[test]
fn reward_worked_fixture() {
    let out = cabs(&["reward", "--input", fixture("tif_worked.jsonl").to_str().unwrap(), "--alpha", "1", "--gamma", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = &v["breakdowns"][0];
    let running = 1.0 - (0.0_f64.powi(2) + 0.25_f64.powi(2)) / 2.0;
    let control = 1.0 - (1.0_f64 / (3.0 + 1e-8)).powi(2);
    let total = running + control + 0.75 + 0.05;
    assert!((b["total"].as_f64().unwrap() - total).abs() < 1e-12);
    assert!((b["total"].as_f64().unwrap() - 2.657639).abs() < 1e-6);
    assert_eq!(b["unit_rewards"], serde_json::json!([1.0, 0.5]));
    assert_eq!(v["matches"][0]["false_positives"], 1);
    assert!(v["advantages"][0].as_f64().unwrap() > 0.0);
}

#[test]
fn perturb_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<CaseRecord> = synthetic_cases(30, 5)
        .into_iter()
        .map(|c| CaseRecord { pred_report: None, ..c })
        .collect();
    let input = write_cases(dir.path(), &cases);
    let pools = dir.path().join("pools.jsonl");
    let out = cabs(&["perturb", "--input", input.to_str().unwrap(), "--seed", "7", "--output", pools.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = dir.path().join("pools2.jsonl");
    cabs(&["perturb", "--input", input.to_str().unwrap(), "--seed", "7", "--output", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&pools).unwrap(), std::fs::read(&again).unwrap());

    let out = cabs(&["analyze", "--input", pools.to_str().unwrap(), "--metrics", "cabs_f1,bleu,rouge_l"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mean_phi"]["cabs_f1"].as_f64().unwrap(), 1.0);
    assert!(v["mean_phi"]["bleu"].as_f64().unwrap() < 1.0);
}

#[test]
fn analyze_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = cabs_core::divergence::two_latent_scores(8, &["a1", "a2"], &["b1", "b2"], 0.03, 0);
    let path = dir.path().join("scores.csv");
    std::fs::write(&path, table.to_csv()).unwrap();
    let out = cabs(&["analyze", "--input", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn mcq_generate_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_cases(dir.path(), &synthetic_cases(20, 3));
    let items = dir.path().join("items.jsonl");
    let out = cabs(&["mcq", "generate", "--input", input.to_str().unwrap(), "--seed", "1", "--output", items.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds: String = std::fs::read_to_string(&items)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            format!("{{\"item_id\":{},\"answer\":{}}}\n", v["item_id"], v["answer"])
        })
        .collect();
    let preds_path = dir.path().join("preds.jsonl");
    std::fs::write(&preds_path, preds).unwrap();
    let out = cabs(&["mcq", "score", "--input", items.to_str().unwrap(), "--predictions", preds_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["average"], 1.0);
}

#[test]
fn extract_rule_based() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reports.jsonl");
    std::fs::write(&path, "{\"case_id\":\"a\",\"report\":\"Small right pleural effusion. No pneumothorax.\"}\n").unwrap();
    let out = cabs(&["extract", "--input", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["units"]["abnormalities"][0]["name"], "pleural effusion");
    assert_eq!(v["units"]["abnormalities"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes_and_error_lines() {
    let out = cabs(&["perturb", "--input", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_line(&out)["kind"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"case_id\":\"a\",\"gt_units\":{\"abnormalities\":[{\"name\":\"x\",\"evidence\":\"\",\"location\":\"\",\"attributes\":\"\",\"certainty\":\"maybe\",\"organ\":\"lung\"}],\"report_has_abnormality\":true},\"pred_report\":\"x\"}\n").unwrap();
    let out = cabs(&["eval", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let line = stderr_line(&out);
    assert_eq!(line["kind"], "validation");
    assert_eq!(line["path"], "line 1.gt_units.abnormalities[0].certainty");

    let out = cabs(&["eval", "--input", bad.to_str().unwrap(), "--matcher", "fuzzy"]);
    assert_eq!(out.status.code(), Some(2));

    let good = write_cases(dir.path(), &synthetic_cases(1, 0));
    let out = cabs(&[
        "eval",
        "--input",
        good.to_str().unwrap(),
        "--matcher",
        "llm",
        "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_line(&out)["kind"], "backend");
}
