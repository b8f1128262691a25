//! Benchmark files and report rendering: line-delimited question and
//! prediction records, and the text and machine report layouts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use geomm_core::question::{Dataset, DatasetError, Question};
use geomm_core::{AccuracyReport, Discipline, ImageFormat, Modality, OptionLetter, Options, Selector, Split, Task};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::orchestrator::Prediction;

/// Keys of one question record, all required.
pub const QUESTION_KEYS: &[&str] = &[
    "id",
    "split",
    "question_text",
    "image_refs",
    "options",
    "answer",
    "disciplines",
    "modalities",
    "task",
    "image_format",
];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {reason}")]
    MissingFile { path: PathBuf, reason: String },
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("line {line}: field `{field}`: {reason}")]
    SchemaViolation { line: usize, field: String, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|e| LoadError::MissingFile { path: path.to_path_buf(), reason: e.to_string() })
}

/// Non-blank lines with their 1-based numbers, each parsed as a JSON object.
fn records(text: &str) -> impl Iterator<Item = Result<(usize, Map<String, Value>), LoadError>> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| {
        let line = i + 1;
        match serde_json::from_str::<Value>(l) {
            Ok(Value::Object(m)) => Ok((line, m)),
            Ok(_) => Err(LoadError::ParseError { line, reason: "record is not a JSON object".into() }),
            Err(e) => Err(LoadError::ParseError { line, reason: e.to_string() }),
        }
    })
}

fn check_field<T: DeserializeOwned>(m: &Map<String, Value>, line: usize, field: &str) -> Result<(), LoadError> {
    serde_json::from_value::<T>(m[field].clone()).map(drop).map_err(|e| LoadError::SchemaViolation {
        line,
        field: field.into(),
        reason: e.to_string(),
    })
}

fn parse_question(line: usize, m: Map<String, Value>) -> Result<Question, LoadError> {
    if let Some(k) = m.keys().find(|k| !QUESTION_KEYS.contains(&k.as_str())) {
        return Err(LoadError::SchemaViolation { line, field: k.clone(), reason: "unknown key".into() });
    }
    if let Some(k) = QUESTION_KEYS.iter().find(|k| !m.contains_key(**k)) {
        return Err(LoadError::SchemaViolation { line, field: k.to_string(), reason: "missing key".into() });
    }
    check_field::<String>(&m, line, "id")?;
    check_field::<Split>(&m, line, "split")?;
    check_field::<String>(&m, line, "question_text")?;
    check_field::<Vec<String>>(&m, line, "image_refs")?;
    check_field::<Options>(&m, line, "options")?;
    check_field::<OptionLetter>(&m, line, "answer")?;
    check_field::<BTreeSet<Discipline>>(&m, line, "disciplines")?;
    check_field::<BTreeSet<Modality>>(&m, line, "modalities")?;
    check_field::<Task>(&m, line, "task")?;
    check_field::<ImageFormat>(&m, line, "image_format")?;
    let q: Question =
        serde_json::from_value(Value::Object(m)).map_err(|e| LoadError::ParseError { line, reason: e.to_string() })?;
    if let Some(v) = geomm_core::validate_question(&q).into_iter().next() {
        return Err(LoadError::SchemaViolation { line, field: v.field().into(), reason: v.to_string() });
    }
    Ok(q)
}

/// Parses question records. Image references are kept as written.
pub fn parse_dataset(text: &str, provenance: &str) -> Result<Dataset, LoadError> {
    let mut questions = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in records(text) {
        let (line, m) = rec?;
        let q = parse_question(line, m)?;
        if !seen.insert(q.id.clone()) {
            return Err(LoadError::DuplicateId(q.id));
        }
        questions.push(q);
    }
    Dataset::new(questions, provenance).map_err(|e| match e {
        DatasetError::DuplicateId(id) => LoadError::DuplicateId(id),
        DatasetError::InvalidQuestion { id, violation } => LoadError::SchemaViolation {
            line: 0,
            field: violation.field().into(),
            reason: format!("{id}: {violation}"),
        },
    })
}

/// Loads a question file; its path is the dataset provenance.
pub fn load_dataset(path: &Path) -> Result<Dataset, LoadError> {
    parse_dataset(&read(path)?, &path.display().to_string())
}

/// Rewrites relative image references against `root`.
pub fn resolve_images(dataset: &Dataset, root: &Path) -> Dataset {
    let questions = dataset
        .questions()
        .iter()
        .cloned()
        .map(|mut q| {
            for r in &mut q.image_refs {
                if Path::new(r.as_str()).is_relative() {
                    *r = root.join(&*r).display().to_string();
                }
            }
            q
        })
        .collect();
    Dataset::new(questions, dataset.provenance()).expect("resolving paths keeps questions valid")
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, LoadError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in records(text) {
        let (line, m) = rec?;
        if let Some(k) = m.keys().find(|k| *k != "id" && *k != "raw_output") {
            return Err(LoadError::SchemaViolation { line, field: k.clone(), reason: "unknown key".into() });
        }
        for k in ["id", "raw_output"] {
            if !m.get(k).is_some_and(Value::is_string) {
                return Err(LoadError::SchemaViolation { line, field: k.into(), reason: "expected a string".into() });
            }
        }
        let p: Prediction = serde_json::from_value(Value::Object(m)).expect("fields checked");
        if !seen.insert(p.id.clone()) {
            return Err(LoadError::DuplicateId(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, LoadError> {
    parse_predictions(&read(path)?)
}

pub fn predictions_jsonl(predictions: &[Prediction]) -> String {
    predictions.iter().map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n").collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Layout {
    Text,
    Machine,
}

const EMPTY_CELL: &str = "–";

fn cell_text(r: &AccuracyReport, s: Selector) -> String {
    match r.cell(s).and_then(|c| c.accuracy_pct) {
        Some(p) => format!("{p:.1}"),
        None => EMPTY_CELL.into(),
    }
}

fn table(groups: &[(&str, Vec<(String, Selector)>)], r: &AccuracyReport) -> String {
    let cols: Vec<(String, String)> =
        groups.iter().flat_map(|(_, cols)| cols.iter().map(|(label, s)| (label.clone(), cell_text(r, *s)))).collect();
    let widths: Vec<usize> = cols.iter().map(|(l, v)| l.chars().count().max(v.chars().count())).collect();
    let mut group_line = String::from("|");
    let mut i = 0;
    for (name, gcols) in groups {
        let w: usize = widths[i..i + gcols.len()].iter().map(|w| w + 3).sum();
        group_line += &format!(" {name:<width$}|", width = w - 2);
        i += gcols.len();
    }
    let row = |f: &dyn Fn(usize) -> String| {
        let mut s = String::from("|");
        for (j, w) in widths.iter().enumerate() {
            s += &format!(" {:<w$} |", f(j));
        }
        s
    };
    let header = row(&|j| cols[j].0.clone());
    let rule = row(&|j| "-".repeat(widths[j]));
    let values = row(&|j| cols[j].1.clone());
    format!("{group_line}\n{header}\n{rule}\n{values}\n")
}

fn columns<T: Copy>(all: &[T], label: fn(T) -> &'static str, sel: fn(T) -> Selector) -> Vec<(String, Selector)> {
    all.iter().map(|&x| (label(x).to_string(), sel(x))).collect()
}

/// Text layout: overall line, then split columns (only those with
/// questions), disciplines, modalities and tasks in result-table order,
/// then the image-format breakdown.
pub fn render_text(r: &AccuracyReport) -> String {
    let mut out = format!("Accuracy: {:.1}% ({}/{})\n\n", r.accuracy_pct, r.correct, r.total);
    let splits: Vec<(String, Selector)> = columns(Split::ALL, Split::label, Selector::Split)
        .into_iter()
        .filter(|(_, s)| r.cell(*s).is_some_and(|c| c.total > 0))
        .collect();
    let mut groups = Vec::new();
    if !splits.is_empty() {
        groups.push(("Split", splits));
    }
    groups.push(("Disciplines", columns(Discipline::ALL, Discipline::label, Selector::Discipline)));
    groups.push(("Sensor Modalities", columns(Modality::ALL, Modality::label, Selector::Modality)));
    groups.push(("Task Spectrum", columns(Task::ALL, Task::label, Selector::Task)));
    out += &table(&groups, r);
    out += "\n";
    out += &table(&[("Image Formats", columns(ImageFormat::ALL, ImageFormat::label, Selector::ImageFormat))], r);
    out
}

/// Machine layout: one JSON object.
pub fn render_machine(r: &AccuracyReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

pub fn render_report(r: &AccuracyReport, layout: Layout) -> String {
    match layout {
        Layout::Text => render_text(r),
        Layout::Machine => render_machine(r),
    }
}

pub fn parse_machine_report(text: &str) -> Result<AccuracyReport, serde_json::Error> {
    serde_json::from_str(text)
}
