//! Self-evaluation of one iteration: a model-backed assessor with a rule
//! fallback.

use std::sync::Arc;

use geomm_core::question::Question;
use geomm_core::AnswerStatus;
use serde::{Deserialize, Serialize};

use super::execute::{SubgoalRecord, SubgoalStatus};
use super::plan::{json_object, Plan};
use crate::prompts;
use crate::protocol::Arguments;
use crate::reasoning::TextBackend;

/// Characters of each subgoal output shown to the assessor.
const LOG_EXCERPT: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionHint {
    pub subgoal: String,
    pub hint: String,
    /// Replacement arguments merged into the subgoal's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Arguments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub confidence: Confidence,
    pub analysis: String,
    #[serde(default)]
    pub revision_hints: Vec<RevisionHint>,
    #[serde(default)]
    pub replan: bool,
}

impl Verdict {
    pub fn is_success(&self) -> bool {
        self.status == VerdictStatus::Success
    }

    /// Drops hints naming unknown subgoals; a failure left without hints
    /// becomes a re-plan directive.
    fn normalized(mut self, plan: &Plan) -> Self {
        self.revision_hints.retain(|h| plan.position(&h.subgoal).is_some());
        if self.status == VerdictStatus::Failure && self.revision_hints.is_empty() {
            self.replan = true;
        }
        self
    }
}

#[derive(Clone)]
pub enum Evaluator {
    Rule,
    Model(Arc<dyn TextBackend>),
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Evaluator::Rule => f.write_str("Rule"),
            Evaluator::Model(b) => write!(f, "Model({})", b.name()),
        }
    }
}

/// Failure when the candidate is invalid, the terminal subgoal did not
/// succeed, or no other subgoal produced supporting evidence.
pub fn rule_verdict(plan: &Plan, records: &[SubgoalRecord], candidate: AnswerStatus) -> Verdict {
    let terminal = plan.terminal().map(|t| t.id.as_str());
    let terminal_ok = records.iter().any(|r| Some(r.id.as_str()) == terminal && r.is_ok());
    let support = records.iter().filter(|r| Some(r.id.as_str()) != terminal && r.is_ok()).count();
    let mut problems = Vec::new();
    if candidate == AnswerStatus::Invalid {
        problems.push("no valid option was produced".to_string());
    }
    if !terminal_ok {
        problems.push("the final step did not succeed".to_string());
    }
    if support == 0 {
        problems.push("the answer has no supporting evidence".to_string());
    }
    if problems.is_empty() {
        return Verdict {
            status: VerdictStatus::Success,
            confidence: Confidence::High,
            analysis: format!("Answer supported by {support} evidence item(s)."),
            revision_hints: Vec::new(),
            replan: false,
        };
    }
    let revision_hints: Vec<RevisionHint> = records
        .iter()
        .filter(|r| r.status == SubgoalStatus::Failed)
        .map(|r| RevisionHint {
            subgoal: r.id.clone(),
            hint: format!("retry: {}", r.error.clone().unwrap_or_default()),
            arguments: Some(Arguments::new()),
        })
        .collect();
    Verdict {
        status: VerdictStatus::Failure,
        confidence: Confidence::Low,
        analysis: format!("Low confidence: {}.", problems.join("; ")),
        replan: revision_hints.is_empty(),
        revision_hints,
    }
}

fn excerpt(s: &str) -> String {
    if s.chars().count() <= LOG_EXCERPT {
        return s.to_string();
    }
    let cut: String = s.chars().take(LOG_EXCERPT).collect();
    format!("{cut}…")
}

/// Assessor prompt: system text, question and options, the execution log
/// and the candidate answer.
pub fn evaluator_prompt(q: &Question, records: &[SubgoalRecord], candidate: AnswerStatus) -> String {
    let mut out = format!("{}\n\nQuestion: {}\n", prompts::SELF_EVALUATION_AGENT, q.question_text);
    if !q.image_refs.is_empty() {
        out += &format!("Images: {}\n", q.image_refs.join(", "));
    }
    out += "Options:\n";
    for (l, t) in &q.options {
        out += &format!("{l}. {t}\n");
    }
    out += "Execution log:\n";
    for r in records {
        let status = match r.status {
            SubgoalStatus::Ok => "ok",
            SubgoalStatus::Failed => "failed",
            SubgoalStatus::Skipped => "skipped",
        };
        let body = match r.status {
            SubgoalStatus::Ok => r.text(),
            _ => r.error.clone().unwrap_or_default(),
        };
        out += &format!("[{}] {} ({status}): {}\n", r.id, r.tool, excerpt(&body).replace('\n', " "));
    }
    let answer = candidate.letter().map_or_else(|| "invalid".to_string(), |l| l.to_string());
    out += &format!("Candidate answer: {answer}\n");
    out += concat!(
        "Reply with one JSON object {\"status\": \"success\" | \"failure\", \"confidence\": \"high\" | \"low\", ",
        "\"analysis\", \"revision_hints\": [{\"subgoal\", \"hint\"}], \"replan\": false}.\n",
    );
    out
}

/// The verdict and a note on which assessor produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub verdict: Verdict,
    pub source: String,
}

pub fn self_evaluate(
    evaluator: &Evaluator,
    q: &Question,
    plan: &Plan,
    records: &[SubgoalRecord],
    candidate: AnswerStatus,
) -> Assessment {
    let backend = match evaluator {
        Evaluator::Rule => {
            return Assessment {
                verdict: rule_verdict(plan, records, candidate).normalized(plan),
                source: "rule".into(),
            }
        }
        Evaluator::Model(b) => b,
    };
    let reply = backend.complete(&evaluator_prompt(q, records, candidate)).map_err(|e| e.to_string());
    let parsed = reply.and_then(|r| {
        let v = json_object(&r).ok_or_else(|| "reply holds no JSON object".to_string())?;
        serde_json::from_value::<Verdict>(v).map_err(|e| e.to_string())
    });
    match parsed {
        Ok(v) => Assessment { verdict: v.normalized(plan), source: format!("model:{}", backend.name()) },
        Err(e) => Assessment {
            verdict: rule_verdict(plan, records, candidate).normalized(plan),
            source: format!("rule (evaluator unavailable: {e})"),
        },
    }
}
