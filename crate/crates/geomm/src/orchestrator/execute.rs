//! Runs a validated plan level by level. Independent subgoals within a
//! level run on separate threads; a failed subgoal skips its dependents.

use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::{Duration, Instant};

use geomm_core::question::Options;
use geomm_core::{extract_answer, AnswerStatus};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::plan::{Plan, Subgoal, EVIDENCE_KEY, REF_KEY};
use crate::protocol::{Arguments, Capability, OutputKind, Registry, ToolResult};
use crate::reasoning::{EvidenceItem, PriorAttempt, NO_MATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgoalStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalRecord {
    pub id: String,
    pub capability: Capability,
    pub tool: String,
    /// Arguments after reference substitution; empty when skipped.
    pub arguments: Arguments,
    pub status: SubgoalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Carried over from the previous iteration without a new call.
    pub reused: bool,
    pub elapsed_ms: u64,
}

impl SubgoalRecord {
    pub fn is_ok(&self) -> bool {
        self.status == SubgoalStatus::Ok
    }

    pub fn text(&self) -> String {
        self.result.as_ref().map(ToolResult::text).unwrap_or_default()
    }

    pub fn evidence(&self) -> EvidenceItem {
        EvidenceItem {
            id: self.id.clone(),
            capability: self.capability,
            tool: self.tool.clone(),
            text: self.text(),
            provenance: self.result.as_ref().and_then(|r| r.provenance.clone()),
        }
    }

    fn skipped(s: &Subgoal, reason: String) -> Self {
        Self {
            id: s.id.clone(),
            capability: s.capability,
            tool: s.tool.clone(),
            arguments: Arguments::new(),
            status: SubgoalStatus::Skipped,
            result: None,
            error: Some(reason),
            reused: false,
            elapsed_ms: 0,
        }
    }
}

/// Looks up `path` (`text`, `<kind>` or `<kind>.<field>`) in a result.
fn select(r: &SubgoalRecord, path: &str) -> Result<Value, String> {
    if path == "text" {
        return Ok(Value::String(r.text()));
    }
    let (kind, field) = match path.split_once('.') {
        Some((k, f)) => (k, Some(f)),
        None => (path, None),
    };
    let kind: OutputKind = serde_json::from_value(json!(kind)).map_err(|_| format!("unknown output kind `{kind}`"))?;
    let payload = r
        .result
        .as_ref()
        .and_then(|res| res.payload(kind))
        .ok_or_else(|| format!("`{}` has no {kind:?} payload", r.id))?;
    match field {
        None => Ok(payload.clone()),
        Some(f) => payload.get(f).cloned().ok_or_else(|| format!("`{}` payload has no field `{f}`", r.id)),
    }
}

fn resolve(v: &Value, done: &BTreeMap<String, SubgoalRecord>) -> Result<Value, String> {
    let get = |id: &str| done.get(id).ok_or_else(|| format!("`{id}` has not run"));
    match v {
        Value::Object(m) if m.contains_key(REF_KEY) => {
            let id = m[REF_KEY].as_str().ok_or("`$ref` must be a string")?;
            let path = m.get("path").and_then(Value::as_str).unwrap_or("text");
            select(get(id)?, path)
        }
        Value::Object(m) if m.contains_key(EVIDENCE_KEY) => {
            let ids = m[EVIDENCE_KEY].as_array().ok_or("`$evidence` must be a list")?;
            let items = ids
                .iter()
                .map(|id| id.as_str().ok_or_else(|| "evidence ids must be strings".to_string()))
                .map(|id| Ok(get(id?)?.evidence()))
                .collect::<Result<Vec<_>, String>>()?;
            Ok(serde_json::to_value(items).expect("evidence serializes"))
        }
        Value::Object(m) => {
            Ok(Value::Object(m.iter().map(|(k, x)| Ok((k.clone(), resolve(x, done)?))).collect::<Result<_, String>>()?))
        }
        Value::Array(a) => Ok(Value::Array(a.iter().map(|x| resolve(x, done)).collect::<Result<_, _>>()?)),
        other => Ok(other.clone()),
    }
}

/// Inputs that vary between iterations of one question.
#[derive(Debug, Clone, Default)]
pub struct Rerun<'a> {
    /// Results to keep, by subgoal id. Subgoals not listed here run.
    pub reuse: BTreeMap<String, &'a SubgoalRecord>,
    /// Earlier answers, handed to reasoning subgoals that accept them.
    pub prior_attempts: Vec<PriorAttempt>,
}

fn run_one(
    s: &Subgoal,
    registry: &Registry,
    deadline: Duration,
    done: &BTreeMap<String, SubgoalRecord>,
    prior: &[PriorAttempt],
) -> SubgoalRecord {
    let start = Instant::now();
    let mut record = SubgoalRecord::skipped(s, String::new());
    record.error = None;
    let args = match resolve(&Value::Object(s.arguments.clone()), done) {
        Ok(Value::Object(mut m)) => {
            m.retain(|_, v| !v.is_null());
            let accepts_prior =
                registry.descriptor(&s.tool).is_some_and(|d| d.input_schema.contains_key("prior_attempts"));
            if accepts_prior && !prior.is_empty() && !m.contains_key("prior_attempts") {
                m.insert("prior_attempts".into(), serde_json::to_value(prior).expect("attempts serialize"));
            }
            m
        }
        Ok(_) => unreachable!("objects resolve to objects"),
        Err(e) => {
            record.status = SubgoalStatus::Failed;
            record.error = Some(format!("argument resolution: {e}"));
            return record;
        }
    };
    let outcome = registry.call_tool(&s.tool, &args, deadline);
    record.arguments = args;
    record.elapsed_ms = start.elapsed().as_millis() as u64;
    match outcome {
        Ok(r) if r.is_ok() => {
            record.status = SubgoalStatus::Ok;
            record.result = Some(r);
        }
        Ok(r) => {
            record.status = SubgoalStatus::Failed;
            record.error = Some(r.text());
            record.result = Some(r);
        }
        Err(e) => {
            record.status = SubgoalStatus::Failed;
            record.error = Some(e.to_string());
        }
    }
    record
}

/// Executes `plan` and returns one record per subgoal, in plan order. The
/// plan must already be valid.
pub fn execute(plan: &Plan, registry: &Registry, deadline: Duration, rerun: &Rerun<'_>) -> Vec<SubgoalRecord> {
    let Some(levels) = plan.levels() else { return Vec::new() };
    let pre = plan.prerequisites();
    let mut done: BTreeMap<String, SubgoalRecord> = BTreeMap::new();
    for level in levels {
        let mut to_run = Vec::new();
        for &i in &level {
            let s = &plan.subgoals[i];
            let failed: Vec<&str> = pre[i]
                .iter()
                .map(|&p| plan.subgoals[p].id.as_str())
                .filter(|p| !done.get(*p).is_some_and(SubgoalRecord::is_ok))
                .collect();
            if !failed.is_empty() {
                done.insert(
                    s.id.clone(),
                    SubgoalRecord::skipped(s, format!("prerequisite failed: {}", failed.join(", "))),
                );
            } else if let Some(prev) = rerun.reuse.get(&s.id) {
                let mut r = (*prev).clone();
                r.reused = true;
                done.insert(s.id.clone(), r);
            } else {
                to_run.push(s);
            }
        }
        let fresh: Vec<SubgoalRecord> = if to_run.len() == 1 {
            vec![run_one(to_run[0], registry, deadline, &done, &rerun.prior_attempts)]
        } else {
            thread::scope(|scope| {
                let handles: Vec<_> = to_run
                    .iter()
                    .map(|s| {
                        let done = &done;
                        scope.spawn(move || run_one(s, registry, deadline, done, &rerun.prior_attempts))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("subgoal threads catch tool panics")).collect()
            })
        };
        for r in fresh {
            done.insert(r.id.clone(), r);
        }
    }
    plan.subgoals.iter().map(|s| done.remove(&s.id).expect("every subgoal is recorded")).collect()
}

/// Letter read off the terminal subgoal's output, or `Invalid` when it
/// failed, reported no match or names no option.
pub fn candidate(plan: &Plan, records: &[SubgoalRecord], options: &Options) -> AnswerStatus {
    let Some(last) = plan.terminal().and_then(|t| records.iter().find(|r| r.id == t.id)) else {
        return AnswerStatus::Invalid;
    };
    let text = last.text();
    if !last.is_ok() || text.trim() == NO_MATCH {
        return AnswerStatus::Invalid;
    }
    extract_answer(&text, options).status
}

/// Indices to re-run: the given ones, every subgoal that did not succeed,
/// and everything downstream.
pub fn dirty_set(plan: &Plan, records: &[SubgoalRecord], hinted: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut seeds = hinted.clone();
    seeds.extend(records.iter().enumerate().filter(|(_, r)| !r.is_ok()).map(|(i, _)| i));
    plan.with_descendants(&seeds)
}
