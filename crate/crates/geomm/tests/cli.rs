mod support;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use geomm::protocol::wire;
use geomm::run::{RunManifest, MANIFEST_FILE, REPORT_MACHINE_FILE, REPORT_TEXT_FILE};
use geomm_core::Split;
use serde_json::{json, Value};
use support::{fixtures, synthetic};
use tempfile::TempDir;

fn geomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomm")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn run_benchmark(extra: &[&str]) -> (Output, TempDir) {
    let runs = tempfile::tempdir().unwrap();
    let root = runs.path().display().to_string();
    let config = fixture("config.toml");
    let dataset = fixture("benchmark.jsonl");
    let mut args = vec!["run", "--config", &config, "--dataset", &dataset, "--run-dir", &root];
    args.extend_from_slice(extra);
    (geomm(&args), runs)
}

#[test]
fn run_writes_a_complete_run_directory() {
    let (out, runs) = run_benchmark(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("Accuracy: 100.0% (20/20)"), "{}", stdout(&out));
    let dir = only_run_dir(runs.path());
    for f in [MANIFEST_FILE, REPORT_TEXT_FILE, REPORT_MACHINE_FILE, "predictions.jsonl"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.outputs.traces.len(), 20);
    assert!(manifest.error.is_none());
}

#[test]
fn ablation_flag_is_recorded_in_the_manifest() {
    let (out, runs) = run_benchmark(&["--ablate", "knowledge", "--workers", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: RunManifest =
        serde_json::from_slice(&fs::read(only_run_dir(runs.path()).join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(!manifest.config.toggles.knowledge);
    assert!(manifest.config.toggles.perception);
    assert_eq!(manifest.workers, 1);
}

#[test]
fn unknown_ablation_is_a_config_error() {
    let (out, _runs) = run_benchmark(&["--ablate", "telepathy"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("telepathy"), "{}", stderr(&out));
}

#[test]
fn config_without_toggles_exits_two_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixtures().join("config.toml")).unwrap();
    let start = text.find("[toggles]").unwrap();
    let end = text.find("[budgets]").unwrap();
    let broken = dir.path().join("config.toml");
    fs::write(&broken, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let out = geomm(&["run", "--config", &broken.display().to_string(), "--dataset", &fixture("benchmark.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("toggles"), "{}", stderr(&out));
}

#[test]
fn solve_prints_both_iterations_of_the_band_question() {
    let runs = tempfile::tempdir().unwrap();
    let out = geomm(&[
        "solve",
        "--config",
        &fixture("config.toml"),
        "--question",
        &fixture("case-band.jsonl"),
        "--run-dir",
        &runs.path().display().to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("Candidate answer:").count(), 2, "{text}");
    assert_eq!(text.matches("Re-execution with revised plan").count(), 1, "{text}");
    assert!(text.contains("Phase 5: Self-evaluation"), "{text}");
    assert!(text.contains("Final answer: D"), "{text}");
}

#[test]
fn trace_only_writes_the_trace_silently() {
    let runs = tempfile::tempdir().unwrap();
    let out = geomm(&[
        "solve",
        "--config",
        &fixture("config.toml"),
        "--question",
        &fixture("case-aircraft.jsonl"),
        "--run-dir",
        &runs.path().display().to_string(),
        "--trace-only",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let traces = only_run_dir(runs.path()).join("traces");
    assert_eq!(fs::read_dir(traces).unwrap().count(), 1);
}

#[test]
fn invalid_question_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let line = fs::read_to_string(fixtures().join("case-band.jsonl"))
        .unwrap()
        .replace("\"answer\": \"D\"", "\"answer\": \"F\"");
    let q = dir.path().join("q.jsonl");
    fs::write(&q, line).unwrap();
    let out = geomm(&["solve", "--config", &fixture("config.toml"), "--question", &q.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("answer"), "{}", stderr(&out));
}

/// A 37-question dataset and predictions with 32 correct, minus `drop`
/// prediction lines.
fn scoring_files(dir: &Path, drop: usize) -> (String, String) {
    let ds = synthetic(37, Split::Val, 4);
    let questions: Vec<String> = ds.questions().iter().map(|q| serde_json::to_string(q).unwrap()).collect();
    let preds: Vec<String> = ds
        .questions()
        .iter()
        .enumerate()
        .skip(drop)
        .map(|(i, q)| json!({"id": q.id, "raw_output": if i < 32 { "Answer: A" } else { "Answer: C" }}).to_string())
        .collect();
    let (dp, pp) = (dir.join("questions.jsonl"), dir.join("predictions.jsonl"));
    fs::write(&dp, questions.join("\n")).unwrap();
    fs::write(&pp, preds.join("\n")).unwrap();
    (dp.display().to_string(), pp.display().to_string())
}

#[test]
fn score_prints_the_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, preds) = scoring_files(dir.path(), 0);
    let out = geomm(&["score", "--dataset", &ds, "--predictions", &preds]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("Accuracy: 86.5% (32/37)"), "{}", stdout(&out));
}

#[test]
fn score_machine_layout_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, preds) = scoring_files(dir.path(), 0);
    let out = geomm(&["score", "--dataset", &ds, "--predictions", &preds, "--layout", "machine"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["correct"], 32);
    assert_eq!(v["total"], 37);
}

#[test]
fn missing_prediction_exits_two_naming_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, preds) = scoring_files(dir.path(), 1);
    let out = geomm(&["score", "--dataset", &ds, "--predictions", &preds]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("s00000"), "{}", stderr(&out));
}

#[test]
fn random_baseline_scores_without_predictions() {
    let out = geomm(&["score", "--dataset", &fixture("benchmark.jsonl"), "--random-baseline", "--trials", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("/60)"), "{}", stdout(&out));
}

#[test]
fn report_renders_a_run_directory() {
    let (_, runs) = run_benchmark(&[]);
    let dir = only_run_dir(runs.path());
    let out = geomm(&["report", "--input", &dir.display().to_string()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), fs::read_to_string(dir.join(REPORT_TEXT_FILE)).unwrap());
}

#[test]
fn validate_summarizes_splits() {
    let out = geomm(&["validate", "--dataset", &fixture("benchmark.jsonl")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("20 questions"), "{}", stdout(&out));
    let out = geomm(&["validate", "--dataset", "/nonexistent/questions.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn served_general_toolkit_speaks_the_wire_protocol() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_geomm"))
        .args(["serve-tools", "--toolkit", "general"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    let mut output = BufReader::new(child.stdout.take().unwrap());
    let mut exchange = |frame: &[u8]| {
        input.write_all(frame).unwrap();
        if !frame.ends_with(b"\n") {
            input.write_all(b"\n").unwrap();
        }
        input.flush().unwrap();
        let mut line = String::new();
        output.read_line(&mut line).unwrap();
        line
    };

    let tools = wire::decode_list_response(exchange(&wire::encode_list_request(1)).as_bytes(), 1).unwrap();
    assert_eq!(tools.len(), 8);

    let boxes: Vec<Value> = (0..3)
        .map(|i| json!({"class": "Plane", "confidence": 0.8, "corners": [[i, 0], [i + 1, 0], [i + 1, 1], [i, 1]]}))
        .collect();
    let args = json!({"detections": {"boxes": boxes}}).as_object().unwrap().clone();
    let reply = exchange(&wire::encode_request(2, "box_counting", &args));
    assert_eq!(wire::decode_response(reply.as_bytes(), 2, "box_counting").unwrap().text(), "3");

    let reply: Value = serde_json::from_str(&exchange(b"{not json")).unwrap();
    assert!(reply["id"].is_null(), "{reply}");
    assert_eq!(reply["error"]["code"], wire::PARSE_ERROR);

    let tools = wire::decode_list_response(exchange(&wire::encode_list_request(3)).as_bytes(), 3).unwrap();
    assert_eq!(tools.len(), 8, "server survives a malformed frame");

    drop(input);
    assert!(child.wait().unwrap().success());
}

#[test]
fn serving_a_backed_toolkit_needs_a_config() {
    let out = geomm(&["serve-tools", "--toolkit", "perception"]);
    assert_eq!(out.status.code(), Some(2));
}
