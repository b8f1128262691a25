//! Coordinator: plan, execute, self-evaluate, and selectively re-execute
//! within a retry budget, with per-capability ablation toggles.

pub mod evaluate;
pub mod execute;
pub mod plan;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use geomm_core::question::{Dataset, Question};
use geomm_core::{extract_answer, score, AccuracyReport, AnswerStatus, ExtractedAnswer, ScoreError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::protocol::{Capability, Registry, DEFAULT_DEADLINE};
use crate::reasoning::PriorAttempt;
pub use evaluate::{Assessment, Confidence, Evaluator, RevisionHint, Verdict, VerdictStatus};
pub use execute::{SubgoalRecord, SubgoalStatus};
pub use plan::{Plan, PlanError, Planner, Subgoal};

pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    #[serde(default = "on")]
    pub knowledge: bool,
    #[serde(default = "on")]
    pub perception: bool,
    #[serde(default = "on")]
    pub reasoning: bool,
    #[serde(default = "on")]
    pub self_evaluation: bool,
}

fn on() -> bool {
    true
}

impl Default for Toggles {
    fn default() -> Self {
        Self { knowledge: true, perception: true, reasoning: true, self_evaluation: true }
    }
}

impl Toggles {
    /// General tools cannot be switched off.
    pub fn enabled(&self, c: Capability) -> bool {
        match c {
            Capability::General => true,
            Capability::Knowledge => self.knowledge,
            Capability::Perception => self.perception,
            Capability::Reasoning => self.reasoning,
        }
    }

    pub fn disabled_capabilities(&self) -> Vec<Capability> {
        Capability::ALL.iter().copied().filter(|c| !self.enabled(*c)).collect()
    }

    /// Switches off one component by name: a capability or
    /// `self_evaluation`.
    pub fn ablate(&mut self, component: &str) -> Result<(), String> {
        match component.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "knowledge" => self.knowledge = false,
            "perception" => self.perception = false,
            "reasoning" => self.reasoning = false,
            "self_evaluation" | "evaluation" => self.self_evaluation = false,
            other => return Err(format!("unknown component `{other}`")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budgets {
    /// Re-executions after the first iteration.
    pub retries: u32,
    /// Per tool call.
    pub deadline: Duration,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { retries: DEFAULT_RETRIES, deadline: DEFAULT_DEADLINE }
    }
}

/// Settings recorded in every trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub toggles: Toggles,
    pub retries: u32,
    pub deadline_ms: u64,
    pub planner: String,
    pub evaluator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub index: u32,
    pub planner: String,
    pub plan: Plan,
    pub records: Vec<SubgoalRecord>,
    pub candidate: AnswerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: AnswerStatus,
    /// `Answer: X`, or empty when invalid.
    pub raw_output: String,
}

impl FinalAnswer {
    pub fn new(answer: AnswerStatus) -> Self {
        let raw_output = answer.letter().map(|l| format!("Answer: {l}")).unwrap_or_default();
        Self { answer, raw_output }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub question_id: String,
    pub config: ConfigSnapshot,
    pub iterations: Vec<Iteration>,
    pub final_answer: FinalAnswer,
    pub budget_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        question_id: String,
        config: ConfigSnapshot,
    },
    Iteration(Iteration),
    Final {
        answer: AnswerStatus,
        raw_output: String,
        budget_exhausted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Fields that hold wall-clock readings.
pub const TIMING_FIELDS: &[&str] = &["elapsed_ms", "retrieved_at"];

/// Removes timing fields at any depth.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for f in TIMING_FIELDS {
                m.remove(*f);
            }
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

impl ExecutionTrace {
    /// Line-delimited JSON: a header, one line per iteration, the final
    /// answer.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![TraceLine::Header { question_id: self.question_id.clone(), config: self.config.clone() }];
        lines.extend(self.iterations.iter().cloned().map(TraceLine::Iteration));
        lines.push(TraceLine::Final {
            answer: self.final_answer.answer,
            raw_output: self.final_answer.raw_output.clone(),
            budget_exhausted: self.budget_exhausted,
            error: self.error.clone(),
        });
        lines.iter().map(|l| serde_json::to_string(l).expect("trace serializes") + "\n").collect()
    }

    pub fn from_jsonl(s: &str) -> Result<Self, String> {
        let mut header = None;
        let mut iterations = Vec::new();
        let mut fin = None;
        for (i, line) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| format!("trace line {}: {e}", i + 1))? {
                TraceLine::Header { question_id, config } => header = Some((question_id, config)),
                TraceLine::Iteration(it) => iterations.push(it),
                TraceLine::Final { answer, raw_output, budget_exhausted, error } => {
                    fin = Some((FinalAnswer { answer, raw_output }, budget_exhausted, error))
                }
            }
        }
        let (question_id, config) = header.ok_or("trace has no header line")?;
        let (final_answer, budget_exhausted, error) = fin.ok_or("trace has no final line")?;
        Ok(Self { question_id, config, iterations, final_answer, budget_exhausted, error })
    }

    /// Tools called (not reused) anywhere in the trace.
    pub fn tools_called(&self) -> Vec<&str> {
        self.iterations
            .iter()
            .flat_map(|it| &it.records)
            .filter(|r| !r.reused && r.status != SubgoalStatus::Skipped)
            .map(|r| r.tool.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub raw_output: String,
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub traces: Vec<ExecutionTrace>,
    pub predictions: Vec<Prediction>,
    pub report: Result<AccuracyReport, ScoreError>,
}

pub struct Orchestrator {
    registry: Registry,
    toggles: Toggles,
    budgets: Budgets,
    planner: Planner,
    evaluator: Evaluator,
}

impl Orchestrator {
    /// Tools of disabled capabilities are removed from `registry`.
    pub fn new(registry: Registry, toggles: Toggles, budgets: Budgets) -> Self {
        let registry = registry.without_capabilities(&toggles.disabled_capabilities());
        Self { registry, toggles, budgets, planner: Planner::Rule, evaluator: Evaluator::Rule }
    }

    pub fn with_planner(mut self, planner: Planner) -> Self {
        self.planner = planner;
        self
    }

    pub fn with_evaluator(mut self, evaluator: Evaluator) -> Self {
        self.evaluator = evaluator;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn toggles(&self) -> Toggles {
        self.toggles
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            toggles: self.toggles,
            retries: self.budgets.retries,
            deadline_ms: self.budgets.deadline.as_millis() as u64,
            planner: format!("{:?}", self.planner),
            evaluator: format!("{:?}", self.evaluator),
        }
    }

    pub fn plan(&self, q: &Question) -> Result<plan::Planned, PlanError> {
        let planned = plan::make_plan(&self.planner, q, &self.registry, &self.toggles)?;
        planned.plan.validate(&self.registry, &self.toggles)?;
        Ok(planned)
    }

    /// Applies revision hints to `plan` and returns the hinted indices.
    /// Supplied arguments are merged; otherwise a retrieval subgoal gets
    /// the hint text as its query.
    fn apply_hints(&self, plan: &mut Plan, hints: &[RevisionHint]) -> BTreeSet<usize> {
        let mut hinted = BTreeSet::new();
        for h in hints {
            let Some(i) = plan.position(&h.subgoal) else { continue };
            let s = &mut plan.subgoals[i];
            match (&h.arguments, plan::query_field(&self.registry, &s.tool)) {
                (Some(args), _) => s.arguments.extend(args.clone()),
                (None, Some(field)) => {
                    s.arguments.insert(field.into(), Value::String(h.hint.clone()));
                }
                (None, None) => {}
            }
            hinted.insert(i);
        }
        hinted
    }

    pub fn solve(&self, q: &Question) -> ExecutionTrace {
        let mut trace = ExecutionTrace {
            question_id: q.id.clone(),
            config: self.snapshot(),
            iterations: Vec::new(),
            final_answer: FinalAnswer::new(AnswerStatus::Invalid),
            budget_exhausted: false,
            error: None,
        };
        let (mut plan, mut planner) = match self.plan(q) {
            Ok(p) => (p.plan, p.source),
            Err(e) => {
                trace.error = Some(e.to_string());
                return trace;
            }
        };
        let mut prior: Vec<PriorAttempt> = Vec::new();
        let mut previous: Option<(Vec<SubgoalRecord>, BTreeSet<usize>)> = None;
        for index in 0..=self.budgets.retries {
            let reuse = match &previous {
                Some((records, dirty)) => records
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !dirty.contains(i))
                    .map(|(_, r)| (r.id.clone(), r))
                    .collect(),
                None => BTreeMap::new(),
            };
            let rerun = execute::Rerun { reuse, prior_attempts: prior.clone() };
            let records = execute::execute(&plan, &self.registry, self.budgets.deadline, &rerun);
            let candidate = execute::candidate(&plan, &records, &q.options);
            let mut iteration = Iteration {
                index,
                planner: planner.clone(),
                plan: plan.clone(),
                records,
                candidate,
                verdict: None,
                evaluator: None,
            };
            if !self.toggles.self_evaluation {
                trace.iterations.push(iteration);
                break;
            }
            let a = evaluate::self_evaluate(&self.evaluator, q, &plan, &iteration.records, candidate);
            iteration.verdict = Some(a.verdict.clone());
            iteration.evaluator = Some(a.source);
            let records = iteration.records.clone();
            trace.iterations.push(iteration);
            if a.verdict.is_success() {
                break;
            }
            if index == self.budgets.retries {
                trace.budget_exhausted = true;
                break;
            }
            prior.push(PriorAttempt { answer: candidate.letter(), verdict: a.verdict.analysis.clone() });
            if a.verdict.replan {
                match self.plan(q) {
                    Ok(p) => {
                        plan = p.plan;
                        planner = p.source;
                    }
                    Err(e) => {
                        trace.error = Some(e.to_string());
                        break;
                    }
                }
                previous = None;
            } else {
                let hinted = self.apply_hints(&mut plan, &a.verdict.revision_hints);
                let dirty = execute::dirty_set(&plan, &records, &hinted);
                previous = Some((records, dirty));
            }
        }
        let last = trace.iterations.last().map_or(AnswerStatus::Invalid, |it| it.candidate);
        trace.final_answer = FinalAnswer::new(last);
        trace
    }

    /// Solves every question on a pool of `workers` threads and scores the
    /// results. Output order follows the dataset.
    pub fn run_benchmark(&self, dataset: &Dataset, workers: usize) -> BenchmarkOutcome {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool starts");
        let traces: Vec<ExecutionTrace> =
            pool.install(|| dataset.questions().par_iter().map(|q| self.solve(q)).collect());
        let predictions: Vec<Prediction> = traces
            .iter()
            .map(|t| Prediction { id: t.question_id.clone(), raw_output: t.final_answer.raw_output.clone() })
            .collect();
        let report = score(&extract_predictions(&predictions, dataset), dataset);
        BenchmarkOutcome { traces, predictions, report }
    }
}

/// Runs answer extraction over predictions, using each question's options;
/// ids absent from the dataset are extracted against no options.
pub fn extract_predictions(predictions: &[Prediction], dataset: &Dataset) -> BTreeMap<String, ExtractedAnswer> {
    let none = Default::default();
    predictions
        .iter()
        .map(|p| {
            let options = dataset.get(&p.id).map_or(&none, |q| &q.options);
            (p.id.clone(), extract_answer(&p.raw_output, options))
        })
        .collect()
}
