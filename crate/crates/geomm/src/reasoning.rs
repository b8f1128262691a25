//! Reasoning toolkit: the multimodal reasoning client, multiple-choice
//! matching and spatial-temporal analysis.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use geomm_core::question::{OptionLetter, Options};
use geomm_core::{extract_answer, ExtractionRule};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::knowledge::tokens;
use crate::prompts;
use crate::protocol::{
    Arguments, Binding, Capability, ContentBlock, OutputKind, Registry, RegistryError, RemoteEndpoint,
    SemanticType as T, ToolDescriptor, ToolOutput,
};
use crate::tools::{opt_text, parse, text};

pub const REASONING_AGENT: &str = "reasoning_agent";
pub const MULTIPLE_CHOICE_MATCHING: &str = "multiple_choice_matching";
pub const SPATIAL_TEMPORAL_ANALYSIS: &str = "spatial_temporal_analysis";

/// Text returned by the matching tool when no option can be chosen.
pub const NO_MATCH: &str = "NoMatch";

/// Default prompt budget, in characters, for backends that declare none.
pub const DEFAULT_CONTEXT_LIMIT: usize = 32_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{0}")]
    Unavailable(String),
    #[error("prompt exceeds the backend context window")]
    ContextOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReasoningError {
    #[error("reasoning backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("prompt of {needed} characters exceeds the backend limit of {limit}")]
    ContextOverflow { limit: usize, needed: usize },
    #[error("spatial-temporal analysis needs at least two images, got {0}")]
    InsufficientImages(usize),
}

/// A text-completion model. Prompts may name image files the backend reads.
pub trait TextBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Largest prompt accepted, in characters.
    fn context_limit(&self) -> usize;
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// One scripted response: chosen when the prompt contains every `when_all`
/// substring and none of the `when_none` substrings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub when_all: Vec<String>,
    #[serde(default)]
    pub when_none: Vec<String>,
    /// A string is returned as is; any other JSON value is returned
    /// serialized.
    pub respond: Value,
}

impl ScriptRule {
    fn matches(&self, prompt: &str) -> bool {
        self.when_all.iter().all(|s| prompt.contains(s.as_str()))
            && !self.when_none.iter().any(|s| prompt.contains(s.as_str()))
    }
}

/// Deterministic backend answering from an ordered rule list; the first
/// matching rule wins.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    name: String,
    limit: usize,
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, rules: Vec<ScriptRule>) -> Self {
        Self { name: name.into(), limit: DEFAULT_CONTEXT_LIMIT, rules }
    }

    pub fn with_context_limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    /// Reads line-delimited JSON rules.
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let rules = raw
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
            .collect::<Result<_, String>>()?;
        let name = path.file_stem().map_or_else(|| "scripted".into(), |s| s.to_string_lossy().into_owned());
        Ok(Self::new(format!("scripted:{name}"), rules))
    }
}

impl TextBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn context_limit(&self) -> usize {
        self.limit
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(prompt))
            .ok_or_else(|| BackendError::Unavailable(format!("{}: no scripted response matches", self.name)))?;
        Ok(match &rule.respond {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }
}

/// Backend served by a remote tool taking `{"prompt"}` and answering text.
pub struct RemoteTextBackend {
    endpoint: Arc<RemoteEndpoint>,
    tool: String,
    limit: usize,
    deadline: Duration,
    name: String,
}

impl RemoteTextBackend {
    pub fn new(endpoint: Arc<RemoteEndpoint>, tool: impl Into<String>, limit: usize, deadline: Duration) -> Self {
        let tool = tool.into();
        let name = format!("{}#{tool}", endpoint.address());
        Self { endpoint, tool, limit, deadline, name }
    }
}

impl TextBackend for RemoteTextBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn context_limit(&self) -> usize {
        self.limit
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut args = Arguments::new();
        args.insert("prompt".into(), json!(prompt));
        let r = self
            .endpoint
            .call(&self.tool, &args, self.deadline)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if !r.is_ok() {
            let msg = r.text();
            if msg.to_lowercase().contains("context") {
                return Err(BackendError::ContextOverflow);
            }
            return Err(BackendError::Unavailable(msg));
        }
        Ok(r.text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub capability: Capability,
    pub tool: String,
    pub text: String,
    #[serde(default)]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAttempt {
    /// Proposed letter, or `None` when no answer was produced.
    pub answer: Option<OptionLetter>,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningContext {
    pub question_text: String,
    pub options: Options,
    #[serde(default)]
    pub image_refs: Vec<String>,
    /// Oldest first.
    #[serde(default)]
    pub evidence: Vec<EvidenceItem>,
    /// Oldest first.
    #[serde(default)]
    pub prior_attempts: Vec<PriorAttempt>,
    #[serde(default)]
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    pub free_text: String,
    pub cited_evidence: Vec<String>,
    pub proposed_answer: Option<OptionLetter>,
    /// Evidence items left out to fit the backend's context window.
    pub dropped_evidence: usize,
}

fn evidence_line(e: &EvidenceItem) -> String {
    match &e.provenance {
        Some(p) => format!("[{}] ({}; source: {p}) {}", e.id, e.tool, e.text),
        None => format!("[{}] ({}) {}", e.id, e.tool, e.text),
    }
}

/// Builds the backend prompt: system text, visual evidence, knowledge
/// evidence, earlier attempts, the task, then question and options.
pub fn assemble_prompt(ctx: &ReasoningContext) -> String {
    let mut out = String::from(prompts::REASONING_AGENT);
    out.push_str("\n\n");
    let (knowledge, visual): (Vec<&EvidenceItem>, Vec<&EvidenceItem>) =
        ctx.evidence.iter().partition(|e| e.capability == Capability::Knowledge);
    for (title, items) in [("Visual evidence", visual), ("Knowledge evidence", knowledge)] {
        if !items.is_empty() {
            out += &format!("{title}:\n");
            for e in items {
                out += &evidence_line(e);
                out.push('\n');
            }
            out.push('\n');
        }
    }
    if !ctx.prior_attempts.is_empty() {
        out += "Previous attempts:\n";
        for (i, a) in ctx.prior_attempts.iter().enumerate() {
            let ans = a.answer.map_or_else(|| "none".to_string(), |l| l.to_string());
            out += &format!("{}. Answer {ans}. Verdict: {}\n", i + 1, a.verdict);
        }
        out.push('\n');
    }
    if let Some(task) = &ctx.instruction {
        out += &format!("Task: {task}\n");
    }
    out += &format!("Question: {}\n", ctx.question_text);
    if !ctx.image_refs.is_empty() {
        out += &format!("Images: {}\n", ctx.image_refs.join(", "));
    }
    out += "Options:\n";
    for (l, t) in &ctx.options {
        out += &format!("{l}. {t}\n");
    }
    out += "Cite evidence by its [id]. End with a line of the form \"Answer: X\".\n";
    out
}

/// Evidence ids cited as `[id]` in `text`, limited to `ids`, in `ids` order.
pub fn cited_ids(text: &str, ids: &[&str]) -> Vec<String> {
    ids.iter().filter(|id| text.contains(&format!("[{id}]"))).map(|id| id.to_string()).collect()
}

pub fn reason(ctx: &ReasoningContext, backend: &dyn TextBackend) -> Result<ReasoningOutcome, ReasoningError> {
    let limit = backend.context_limit();
    let mut working = ctx.clone();
    let mut prompt = assemble_prompt(&working);
    while prompt.chars().count() > limit && !working.evidence.is_empty() {
        working.evidence.remove(0);
        prompt = assemble_prompt(&working);
    }
    let needed = prompt.chars().count();
    if needed > limit {
        return Err(ReasoningError::ContextOverflow { limit, needed });
    }
    let free_text = match backend.complete(&prompt) {
        Ok(t) => t,
        Err(BackendError::ContextOverflow) if !working.evidence.is_empty() => {
            let keep = working.evidence.len() / 2;
            working.evidence.drain(..working.evidence.len() - keep);
            prompt = assemble_prompt(&working);
            backend.complete(&prompt).map_err(|e| match e {
                BackendError::ContextOverflow => {
                    ReasoningError::ContextOverflow { limit, needed: prompt.chars().count() }
                }
                BackendError::Unavailable(m) => ReasoningError::BackendUnavailable(m),
            })?
        }
        Err(BackendError::ContextOverflow) => return Err(ReasoningError::ContextOverflow { limit, needed }),
        Err(BackendError::Unavailable(m)) => return Err(ReasoningError::BackendUnavailable(m)),
    };
    if free_text.trim().is_empty() {
        return Err(ReasoningError::BackendUnavailable(format!("{} returned an empty response", backend.name())));
    }
    let ids: Vec<&str> = working.evidence.iter().map(|e| e.id.as_str()).collect();
    Ok(ReasoningOutcome {
        cited_evidence: cited_ids(&free_text, &ids),
        proposed_answer: extract_answer(&free_text, &ctx.options).status.letter(),
        dropped_evidence: ctx.evidence.len() - working.evidence.len(),
        free_text,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Extraction(ExtractionRule),
    Overlap,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMatch {
    pub letter: Option<OptionLetter>,
    pub method: MatchMethod,
    /// Overlap scores per option; empty when extraction decided.
    pub scores: Vec<(OptionLetter, f64)>,
}

/// Maps free text to an option: answer extraction first, then word
/// overlap (shared words over option words). Ties and all-zero scores give
/// no match.
pub fn match_choice(free_text: &str, options: &Options) -> ChoiceMatch {
    let extracted = extract_answer(free_text, options);
    if let (Some(l), Some(rule)) = (extracted.status.letter(), extracted.rule_fired) {
        return ChoiceMatch { letter: Some(l), method: MatchMethod::Extraction(rule), scores: Vec::new() };
    }
    let said: BTreeSet<String> = tokens(free_text).into_iter().collect();
    let scores: Vec<(OptionLetter, f64)> = options
        .iter()
        .map(|(l, t)| {
            let words: BTreeSet<String> = tokens(t).into_iter().collect();
            let shared = words.iter().filter(|w| said.contains(*w)).count();
            (*l, if words.is_empty() { 0.0 } else { shared as f64 / words.len() as f64 })
        })
        .collect();
    let best = scores.iter().map(|s| s.1).fold(0.0, f64::max);
    let top: Vec<OptionLetter> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    match top.as_slice() {
        [l] if best > 0.0 => ChoiceMatch { letter: Some(*l), method: MatchMethod::Overlap, scores },
        _ => ChoiceMatch { letter: None, method: MatchMethod::NoMatch, scores },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedImage {
    pub image_ref: String,
    /// Sortable timestamp, e.g. ISO 8601.
    pub timestamp: String,
}

/// Orders images by timestamp and asks the backend to characterize the
/// change between them.
pub fn analyze_spatiotemporal(
    images: &[TimedImage],
    ctx: &ReasoningContext,
    backend: &dyn TextBackend,
) -> Result<ReasoningOutcome, ReasoningError> {
    if images.len() < 2 {
        return Err(ReasoningError::InsufficientImages(images.len()));
    }
    let mut ordered = images.to_vec();
    ordered.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.image_ref.cmp(&b.image_ref)));
    let listing: Vec<String> =
        ordered.iter().enumerate().map(|(i, t)| format!("t{} ({}) {}", i + 1, t.timestamp, t.image_ref)).collect();
    let mut task = format!(
        "Compare the images in temporal order and characterize the changes between them: {}.",
        listing.join("; ")
    );
    if let Some(extra) = &ctx.instruction {
        task = format!("{task} {extra}");
    }
    let ctx = ReasoningContext {
        image_refs: ordered.into_iter().map(|t| t.image_ref).collect(),
        instruction: Some(task),
        ..ctx.clone()
    };
    reason(&ctx, backend)
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    let r = |name, desc| ToolDescriptor::new(name, desc, Capability::Reasoning, OutputKind::Text);
    vec![
        r(REASONING_AGENT, prompts::REASONING_AGENT)
            .field("question", T::Text, true)
            .field("options", T::OptionMap, true)
            .field("image_refs", T::ImageRefList, false)
            .field("evidence", T::Evidence, false)
            .field("prior_attempts", T::Json, false)
            .field("instruction", T::Text, false),
        r(MULTIPLE_CHOICE_MATCHING, prompts::MULTIPLE_CHOICE_MATCHING).field("text", T::Text, true).field(
            "options",
            T::OptionMap,
            true,
        ),
        r(SPATIAL_TEMPORAL_ANALYSIS, prompts::SPATIAL_TEMPORAL_ANALYSIS)
            .field("images", T::TimedImages, true)
            .field("question", T::Text, true)
            .field("options", T::OptionMap, true)
            .field("evidence", T::Evidence, false)
            .field("instruction", T::Text, false),
    ]
}

fn context(args: &Arguments, with_images: bool) -> Result<ReasoningContext, String> {
    let opt = |name: &str| args.get(name).is_some_and(|v| !v.is_null());
    Ok(ReasoningContext {
        question_text: text(args, "question")?.to_string(),
        options: parse(args, "options")?,
        image_refs: if with_images && opt("image_refs") { parse(args, "image_refs")? } else { Vec::new() },
        evidence: if opt("evidence") { parse(args, "evidence")? } else { Vec::new() },
        prior_attempts: if opt("prior_attempts") { parse(args, "prior_attempts")? } else { Vec::new() },
        instruction: opt_text(args, "instruction").map(str::to_string),
    })
}

fn outcome_output(o: &ReasoningOutcome) -> ToolOutput {
    ToolOutput::text(o.free_text.clone()).block(ContentBlock::payload(
        OutputKind::Text,
        json!({
            "proposed_answer": o.proposed_answer,
            "cited_evidence": o.cited_evidence,
            "dropped_evidence": o.dropped_evidence,
        }),
    ))
}

/// Registers the three reasoning tools over `backend`.
pub fn register(reg: Registry, backend: Arc<dyn TextBackend>) -> Result<Registry, RegistryError> {
    let [agent, matching, spatial]: [ToolDescriptor; 3] = descriptors().try_into().expect("three reasoning tools");
    let b = backend.clone();
    let agent_h = move |a: &Arguments| {
        let o = reason(&context(a, true)?, b.as_ref()).map_err(|e| e.to_string())?;
        Ok(outcome_output(&o))
    };
    let match_h = |a: &Arguments| {
        let options: Options = parse(a, "options")?;
        let m = match_choice(text(a, "text")?, &options);
        let shown = m.letter.map_or_else(|| NO_MATCH.to_string(), |l| l.to_string());
        Ok(ToolOutput::text(shown).block(ContentBlock::payload(OutputKind::Text, &m)))
    };
    let spatial_h = move |a: &Arguments| {
        let images: Vec<TimedImage> = parse(a, "images")?;
        let o = analyze_spatiotemporal(&images, &context(a, false)?, backend.as_ref()).map_err(|e| e.to_string())?;
        Ok(outcome_output(&o))
    };
    reg.register_tool(agent, Binding::handler(agent_h))?
        .register_tool(matching, Binding::handler(match_h))?
        .register_tool(spatial, Binding::handler(spatial_h))
}
