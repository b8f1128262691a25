//! On-disk run artifacts: one directory per run holding per-question
//! traces, predictions, both report layouts and a manifest written last.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::harness::{predictions_jsonl, render_machine, render_text};
use crate::orchestrator::{BenchmarkOutcome, ConfigSnapshot, ExecutionTrace};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_MACHINE_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub predictions: String,
    pub report_text: Option<String>,
    pub report_machine: Option<String>,
    /// Trace file per question id, relative to the run directory.
    pub traces: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: ConfigSnapshot,
    pub seed: u64,
    pub workers: usize,
    pub dataset: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub outputs: RunOutputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn unix_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// File-name-safe form of a question id.
pub fn sanitize(id: &str) -> String {
    let s: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

/// Creates `<root>/run-<started>-<hash>`, adding a counter when taken.
pub fn create_run_dir(root: &Path, started: u64, snapshot: &ConfigSnapshot) -> io::Result<(String, PathBuf)> {
    fs::create_dir_all(root)?;
    let stem = format!("run-{started}-{}", config_hash(snapshot));
    for n in 0u32.. {
        let id = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = root.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("run directory counter exhausted")
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Writes one trace per question under `dir/traces`, returning
/// (question id, relative path) pairs in input order.
pub fn write_traces(dir: &Path, traces: &[ExecutionTrace]) -> io::Result<Vec<(String, String)>> {
    fs::create_dir_all(dir.join(TRACES_DIR))?;
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for t in traces {
        let base = sanitize(&t.question_id);
        let mut name = format!("{base}.jsonl");
        let mut n = 1;
        while !used.insert(name.clone()) {
            name = format!("{base}-{n}.jsonl");
            n += 1;
        }
        let rel = format!("{TRACES_DIR}/{name}");
        fs::write(dir.join(&rel), t.to_jsonl())?;
        out.push((t.question_id.clone(), rel));
    }
    Ok(out)
}

/// Everything a finished benchmark run leaves behind.
pub struct RunRecord<'a> {
    pub outcome: &'a BenchmarkOutcome,
    pub config: ConfigSnapshot,
    pub seed: u64,
    pub workers: usize,
    pub dataset: String,
    pub started_at: u64,
}

/// Writes the run directory and returns its manifest and path. The manifest
/// goes last, so its presence marks a complete run.
pub fn persist(root: &Path, rec: RunRecord<'_>) -> io::Result<(RunManifest, PathBuf)> {
    let (run_id, dir) = create_run_dir(root, rec.started_at, &rec.config)?;
    let traces = write_traces(&dir, &rec.outcome.traces)?;
    fs::write(dir.join(PREDICTIONS_FILE), predictions_jsonl(&rec.outcome.predictions))?;
    let (report_text, report_machine, error) = match &rec.outcome.report {
        Ok(r) => {
            fs::write(dir.join(REPORT_TEXT_FILE), render_text(r))?;
            fs::write(dir.join(REPORT_MACHINE_FILE), render_machine(r))?;
            (Some(REPORT_TEXT_FILE.to_string()), Some(REPORT_MACHINE_FILE.to_string()), None)
        }
        Err(e) => (None, None, Some(e.to_string())),
    };
    let manifest = RunManifest {
        run_id,
        config: rec.config,
        seed: rec.seed,
        workers: rec.workers,
        dataset: rec.dataset,
        started_at: rec.started_at,
        finished_at: unix_secs(),
        outputs: RunOutputs { predictions: PREDICTIONS_FILE.into(), report_text, report_machine, traces },
        error,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok((manifest, dir))
}
