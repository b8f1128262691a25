//! Plans: subgoal DAGs, their validation, the keyword rule planner and the
//! model-backed planner.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use geomm_core::question::Question;
use geomm_core::vocab::{DETECTION_CLASSES, SEGMENTATION_CLASSES};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::Toggles;
use crate::knowledge::GOOGLE_API;
use crate::perception::{OBJECT_DETECTION, SEMANTIC_SEGMENTATION};
use crate::prompts;
use crate::protocol::{Arguments, Capability, Registry};
use crate::reasoning::{TextBackend, MULTIPLE_CHOICE_MATCHING, REASONING_AGENT, SPATIAL_TEMPORAL_ANALYSIS};
use crate::tools::general::{AREA_COUNTING, BOX_COUNTING};

/// Argument key naming the subgoal whose output is substituted.
pub const REF_KEY: &str = "$ref";
/// Argument key listing subgoals whose outputs become evidence items.
pub const EVIDENCE_KEY: &str = "$evidence";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub id: String,
    pub capability: Capability,
    pub tool: String,
    #[serde(default)]
    pub arguments: Arguments,
    #[serde(default)]
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub subgoals: Vec<Subgoal>,
    /// `(prerequisite, dependent)` pairs.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("subgoal id `{0}` is used twice")]
    DuplicateId(String),
    #[error("subgoal `{subgoal}` uses unregistered tool `{tool}`")]
    UnknownTool { subgoal: String, tool: String },
    #[error("subgoal `{subgoal}` declares capability {declared} but `{tool}` is {actual}")]
    CapabilityMismatch { subgoal: String, tool: String, declared: Capability, actual: Capability },
    #[error("subgoal `{0}` uses a disabled capability")]
    DisabledCapability(String),
    #[error("edge names unknown subgoal `{0}`")]
    UnknownEdgeEndpoint(String),
    #[error("dependency cycle through `{0}`")]
    Cycle(String),
    #[error("subgoal `{subgoal}` references `{target}`, which is not one of its prerequisites")]
    ForeignReference { subgoal: String, target: String },
    #[error("terminal subgoal `{0}` has dependents")]
    TerminalNotSink(String),
    #[error("no tools are enabled")]
    NoEnabledTools,
    #[error("planner unavailable: {0}")]
    PlannerUnavailable(String),
}

/// Subgoal ids referenced from `v` through `$ref` or `$evidence`.
pub fn references(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            if let Some(Value::String(id)) = m.get(REF_KEY) {
                out.insert(id.clone());
            }
            if let Some(Value::Array(ids)) = m.get(EVIDENCE_KEY) {
                out.extend(ids.iter().filter_map(Value::as_str).map(str::to_string));
            }
            m.values().for_each(|x| references(x, out));
        }
        Value::Array(a) => a.iter().for_each(|x| references(x, out)),
        _ => {}
    }
}

impl Plan {
    pub fn position(&self, id: &str) -> Option<usize> {
        self.subgoals.iter().position(|s| s.id == id)
    }

    pub fn terminal(&self) -> Option<&Subgoal> {
        self.subgoals.last()
    }

    /// Direct prerequisites of each subgoal, by index.
    pub fn prerequisites(&self) -> Vec<Vec<usize>> {
        let mut pre = vec![Vec::new(); self.subgoals.len()];
        for (a, b) in &self.edges {
            if let (Some(a), Some(b)) = (self.position(a), self.position(b)) {
                pre[b].push(a);
            }
        }
        pre
    }

    /// Subgoal indices grouped into dependency levels; each level only
    /// depends on earlier ones. `None` when the graph has a cycle.
    pub fn levels(&self) -> Option<Vec<Vec<usize>>> {
        let pre = self.prerequisites();
        let mut indegree: Vec<usize> = pre.iter().map(Vec::len).collect();
        let mut dependents = vec![Vec::new(); self.subgoals.len()];
        for (b, ps) in pre.iter().enumerate() {
            for &a in ps {
                dependents[a].push(b);
            }
        }
        let mut levels = Vec::new();
        let mut current: Vec<usize> = (0..self.subgoals.len()).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while !current.is_empty() {
            seen += current.len();
            let mut next = Vec::new();
            for &i in &current {
                for &d in &dependents[i] {
                    indegree[d] -= 1;
                    if indegree[d] == 0 {
                        next.push(d);
                    }
                }
            }
            next.sort_unstable();
            levels.push(std::mem::take(&mut current));
            current = next;
        }
        (seen == self.subgoals.len()).then_some(levels)
    }

    /// Transitive prerequisites of subgoal `i`.
    pub fn ancestors(&self, i: usize) -> BTreeSet<usize> {
        let pre = self.prerequisites();
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<usize> = pre[i].iter().copied().collect();
        while let Some(a) = queue.pop_front() {
            if out.insert(a) {
                queue.extend(pre[a].iter().copied());
            }
        }
        out
    }

    /// `ids` plus everything downstream of them.
    pub fn with_descendants(&self, ids: &BTreeSet<usize>) -> BTreeSet<usize> {
        (0..self.subgoals.len())
            .filter(|&i| ids.contains(&i) || self.ancestors(i).iter().any(|a| ids.contains(a)))
            .collect()
    }

    pub fn validate(&self, registry: &Registry, toggles: &Toggles) -> Result<(), PlanError> {
        let mut ids = BTreeSet::new();
        for s in &self.subgoals {
            if !ids.insert(s.id.as_str()) {
                return Err(PlanError::DuplicateId(s.id.clone()));
            }
            if !toggles.enabled(s.capability) {
                return Err(PlanError::DisabledCapability(s.id.clone()));
            }
            let d = registry
                .descriptor(&s.tool)
                .ok_or_else(|| PlanError::UnknownTool { subgoal: s.id.clone(), tool: s.tool.clone() })?;
            if d.capability != s.capability {
                return Err(PlanError::CapabilityMismatch {
                    subgoal: s.id.clone(),
                    tool: s.tool.clone(),
                    declared: s.capability,
                    actual: d.capability,
                });
            }
            if !toggles.enabled(d.capability) {
                return Err(PlanError::DisabledCapability(s.id.clone()));
            }
        }
        for (a, b) in &self.edges {
            for end in [a, b] {
                if !ids.contains(end.as_str()) {
                    return Err(PlanError::UnknownEdgeEndpoint(end.clone()));
                }
            }
        }
        if self.levels().is_none() {
            let on_cycle = self.edges.first().map(|e| e.0.clone()).unwrap_or_default();
            return Err(PlanError::Cycle(on_cycle));
        }
        for (i, s) in self.subgoals.iter().enumerate() {
            let ancestors = self.ancestors(i);
            let mut refs = BTreeSet::new();
            references(&Value::Object(s.arguments.clone()), &mut refs);
            for r in refs {
                if !self.position(&r).is_some_and(|p| ancestors.contains(&p)) {
                    return Err(PlanError::ForeignReference { subgoal: s.id.clone(), target: r });
                }
            }
        }
        if let Some(t) = self.terminal() {
            if self.edges.iter().any(|(a, _)| *a == t.id) {
                return Err(PlanError::TerminalNotSink(t.id.clone()));
            }
        }
        Ok(())
    }
}

fn reference(id: &str, path: &str) -> Value {
    json!({REF_KEY: id, "path": path})
}

fn options_value(q: &Question) -> Value {
    serde_json::to_value(&q.options).expect("options serialize")
}

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "accurate",
    "an",
    "and",
    "are",
    "as",
    "at",
    "be",
    "by",
    "correct",
    "describes",
    "does",
    "following",
    "for",
    "from",
    "how",
    "in",
    "is",
    "it",
    "of",
    "on",
    "or",
    "shown",
    "statement",
    "statements",
    "that",
    "the",
    "this",
    "to",
    "true",
    "what",
    "which",
    "who",
    "with",
];

/// Web query derived from a question: the subject of "about X is" plus
/// "properties", otherwise the question's content words.
pub fn derive_query(question_text: &str) -> String {
    let lower = question_text.to_lowercase();
    if let Some(start) = lower.find("about ") {
        let rest = &question_text[start + "about ".len()..];
        let end = [" is ", " are ", "?", " was ", " were "]
            .iter()
            .filter_map(|stop| rest.find(stop))
            .min()
            .unwrap_or(rest.len());
        let subject = rest[..end].trim();
        if !subject.is_empty() {
            return format!("{subject} properties");
        }
    }
    question_text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.to_lowercase().as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

const COUNTING_TERMS: &[&str] = &["how many", "number of", "count"];
const AREA_UNITS: &[&str] = &["square met", "m²", "hectare"];

/// Everyday words for the detector classes.
const DETECTION_SYNONYMS: &[(&str, &str)] = &[
    ("aircraft", "Plane"),
    ("airplane", "Plane"),
    ("plane", "Plane"),
    ("ship", "Ship"),
    ("boat", "Ship"),
    ("vessel", "Ship"),
    ("truck", "Large Vehicle"),
    ("bus", "Large Vehicle"),
    ("car", "Small Vehicle"),
    ("soccer field", "Soccer Ball Field"),
    ("football field", "Soccer Ball Field"),
    ("harbour", "Harbor"),
];

const SEGMENTATION_SYNONYMS: &[(&str, &str)] = &[
    ("lake", "water"),
    ("river", "water"),
    ("farmland", "agriculture"),
    ("cropland", "agriculture"),
    ("woodland", "forest"),
    ("bare", "barren"),
];

fn mentions(lower: &str, term: &str) -> bool {
    lower.match_indices(term).any(|(i, _)| {
        let before = lower[..i].chars().next_back();
        let after = lower[i + term.len()..].chars().next();
        before.is_none_or(|c| !c.is_alphanumeric()) && after.is_none_or(|c| !c.is_alphanumeric() || c == 's')
    })
}

/// Detector class named in a question, if any.
pub fn detection_class(question_text: &str) -> Option<&'static str> {
    let lower = question_text.to_lowercase();
    DETECTION_CLASSES
        .iter()
        .map(|c| (c.to_lowercase(), *c))
        .collect::<Vec<_>>()
        .into_iter()
        .chain(DETECTION_SYNONYMS.iter().map(|(w, c)| (w.to_string(), *c)))
        .find(|(w, _)| mentions(&lower, w))
        .map(|(_, c)| c)
}

/// Land-cover class named in a question, if any.
pub fn segmentation_class(question_text: &str) -> Option<&'static str> {
    let lower = question_text.to_lowercase();
    SEGMENTATION_CLASSES
        .iter()
        .filter(|c| **c != "background")
        .map(|c| (*c, *c))
        .chain(SEGMENTATION_SYNONYMS.iter().copied())
        .find(|(w, _)| mentions(&lower, w))
        .map(|(_, c)| c)
}

struct Builder<'a> {
    plan: Plan,
    registry: &'a Registry,
    toggles: &'a Toggles,
}

impl Builder<'_> {
    fn available(&self, tool: &str) -> bool {
        self.registry.descriptor(tool).is_some_and(|d| self.toggles.enabled(d.capability))
    }

    fn push(&mut self, id: &str, tool: &str, arguments: Value, purpose: &str, after: &[&str]) {
        let capability = self.registry.descriptor(tool).map_or(Capability::General, |d| d.capability);
        self.plan.subgoals.push(Subgoal {
            id: id.into(),
            capability,
            tool: tool.into(),
            arguments: arguments.as_object().cloned().unwrap_or_default(),
            purpose: purpose.into(),
        });
        self.plan.edges.extend(after.iter().map(|a| (a.to_string(), id.to_string())));
    }

    /// Adds the matching step over `source`'s text when the tool is enabled.
    fn finish(mut self, q: &Question, source: &str, rationale: &str) -> Plan {
        if self.available(MULTIPLE_CHOICE_MATCHING) {
            let args = json!({"text": reference(source, "text"), "options": options_value(q)});
            self.push("match", MULTIPLE_CHOICE_MATCHING, args, "Match the result with the options.", &[source]);
        }
        self.plan.rationale = rationale.into();
        self.plan
    }
}

/// Keyword planner: multi-image questions go to spatial-temporal analysis,
/// area questions to segmentation and area measurement, counting questions
/// to detection and box counting, and everything else to retrieval in
/// parallel with visual reasoning, then synthesis. A final matching step
/// maps the result to an option.
pub fn rule_plan(q: &Question, registry: &Registry, toggles: &Toggles) -> Result<Plan, PlanError> {
    if !Capability::ALL.iter().any(|c| toggles.enabled(*c) && registry.list_tools().iter().any(|d| d.capability == *c))
    {
        return Err(PlanError::NoEnabledTools);
    }
    let mut b = Builder { plan: Plan::default(), registry, toggles };
    let lower = q.question_text.to_lowercase();
    let image = q.image_refs.first().cloned();

    if q.image_refs.len() >= 2 && b.available(SPATIAL_TEMPORAL_ANALYSIS) {
        let width = q.image_refs.len().to_string().len();
        let images: Vec<Value> = q
            .image_refs
            .iter()
            .enumerate()
            .map(|(i, r)| json!({"image_ref": r, "timestamp": format!("{:0width$}", i + 1)}))
            .collect();
        let args = json!({"images": images, "question": q.question_text, "options": options_value(q)});
        b.push("analyze", SPATIAL_TEMPORAL_ANALYSIS, args, "Characterize changes across the image series.", &[]);
        return Ok(b.finish(q, "analyze", "Multi-temporal question: analyze the image series, then match."));
    }

    if let Some(img) = &image {
        let area_class = segmentation_class(&q.question_text);
        if (mentions(&lower, "area") || AREA_UNITS.iter().any(|t| lower.contains(t)))
            && area_class.is_some()
            && b.available(SEMANTIC_SEGMENTATION)
            && b.available(AREA_COUNTING)
        {
            b.push("segment", SEMANTIC_SEGMENTATION, json!({"image_ref": img}), "Segment land cover.", &[]);
            let args = json!({
                "mask_ref": reference("segment", "mask_ref.mask_ref"),
                "class": area_class,
                "gsd": reference("segment", "mask_ref.gsd"),
            });
            b.push("area", AREA_COUNTING, args, "Measure the class area.", &["segment"]);
            return Ok(b.finish(q, "area", "Area question: segment, measure, then match."));
        }
        if COUNTING_TERMS.iter().any(|t| mentions(&lower, t))
            && b.available(OBJECT_DETECTION)
            && b.available(BOX_COUNTING)
        {
            b.push("detect", OBJECT_DETECTION, json!({"image_ref": img}), "Detect objects.", &[]);
            let mut args = json!({"detections": reference("detect", "detections")});
            if let Some(class) = detection_class(&q.question_text) {
                args["class"] = json!(class);
            }
            b.push("count", BOX_COUNTING, args, "Count the detected objects.", &["detect"]);
            return Ok(b.finish(q, "count", "Counting question: detect, count, then match."));
        }
    }

    let mut sources: Vec<&str> = Vec::new();
    if b.available(GOOGLE_API) {
        let args = json!({"query": derive_query(&q.question_text), "limit": 3});
        b.push("retrieve", GOOGLE_API, args, "Retrieve background knowledge.", &[]);
        sources.push("retrieve");
    }
    if b.available(REASONING_AGENT) {
        let mut args = json!({
            "question": q.question_text,
            "options": options_value(q),
            "instruction": "Describe the visual content relevant to the question.",
        });
        if !q.image_refs.is_empty() {
            args["image_refs"] = json!(q.image_refs);
        }
        b.push("inspect", REASONING_AGENT, args, "Analyze the image.", &[]);
        if sources.is_empty() {
            return Ok(b.finish(q, "inspect", "Reasoning only: analyze, then match."));
        }
        sources.push("inspect");
        let mut args = json!({
            "question": q.question_text,
            "options": options_value(q),
            "evidence": {EVIDENCE_KEY: sources},
            "instruction": "Synthesize the evidence and choose the best option.",
        });
        if !q.image_refs.is_empty() {
            args["image_refs"] = json!(q.image_refs);
        }
        b.push("synthesize", REASONING_AGENT, args, "Combine knowledge and visual evidence.", &sources);
        return Ok(b.finish(
            q,
            "synthesize",
            "Knowledge question: retrieve and inspect in parallel, synthesize, then match.",
        ));
    }
    if let Some(first) = sources.first().copied() {
        return Ok(b.finish(q, first, "Retrieval only."));
    }
    Ok(Plan { rationale: "No enabled tool applies to this question.".into(), ..Plan::default() })
}

/// How plans are produced.
#[derive(Clone)]
pub enum Planner {
    Rule,
    /// Model-backed; invalid plans are re-requested once, then the rule
    /// planner takes over.
    Model(Arc<dyn TextBackend>),
}

impl std::fmt::Debug for Planner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Planner::Rule => f.write_str("Rule"),
            Planner::Model(b) => write!(f, "Model({})", b.name()),
        }
    }
}

/// A plan and a note on how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Planned {
    pub plan: Plan,
    pub source: String,
}

pub fn planner_prompt(q: &Question, registry: &Registry, toggles: &Toggles, feedback: Option<&str>) -> String {
    let mut out = format!("{}\n\nAvailable tools:\n", prompts::COORDINATOR);
    for d in registry.list_tools().iter().filter(|d| toggles.enabled(d.capability)) {
        let fields: Vec<String> = d
            .input_schema
            .iter()
            .map(|(n, f)| format!("{n}{}: {:?}", if f.required { "" } else { "?" }, f.ty))
            .collect();
        out += &format!("- {} [{}] ({}): {}\n", d.name, d.capability, fields.join(", "), d.description);
    }
    out += &format!("\nQuestion: {}\n", q.question_text);
    if !q.image_refs.is_empty() {
        out += &format!("Images: {}\n", q.image_refs.join(", "));
    }
    out += "Options:\n";
    for (l, t) in &q.options {
        out += &format!("{l}. {t}\n");
    }
    out += concat!(
        "\nReply with one JSON object {\"rationale\", \"subgoals\": [{\"id\", \"capability\", \"tool\", \"arguments\", \"purpose\"}], ",
        "\"edges\": [[prerequisite, dependent]]}. Refer to an earlier output with {\"$ref\": id, \"path\": \"text\"} ",
        "and to evidence with {\"$evidence\": [ids]}. The last subgoal produces the answer.\n",
    );
    if let Some(f) = feedback {
        out += &format!("Your previous plan was rejected: {f}\n");
    }
    out
}

/// The outermost JSON object in a model reply.
pub fn json_object(reply: &str) -> Option<Value> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (start < end).then(|| serde_json::from_str(&reply[start..=end]).ok()).flatten()
}

pub fn make_plan(
    planner: &Planner,
    q: &Question,
    registry: &Registry,
    toggles: &Toggles,
) -> Result<Planned, PlanError> {
    let backend = match planner {
        Planner::Rule => return rule_plan(q, registry, toggles).map(|plan| Planned { plan, source: "rule".into() }),
        Planner::Model(b) => b,
    };
    let mut feedback: Option<String> = None;
    for _ in 0..2 {
        let reply = match backend.complete(&planner_prompt(q, registry, toggles, feedback.as_deref())) {
            Ok(r) => r,
            Err(e) => {
                feedback = Some(e.to_string());
                break;
            }
        };
        let parsed = json_object(&reply)
            .ok_or_else(|| "reply holds no JSON object".to_string())
            .and_then(|v| serde_json::from_value::<Plan>(v).map_err(|e| e.to_string()))
            .and_then(|p| p.validate(registry, toggles).map(|_| p).map_err(|e| e.to_string()));
        match parsed {
            Ok(plan) => return Ok(Planned { plan, source: format!("model:{}", backend.name()) }),
            Err(e) => feedback = Some(e),
        }
    }
    let plan = rule_plan(q, registry, toggles)?;
    Ok(Planned { plan, source: format!("rule (model plan rejected: {})", feedback.unwrap_or_default()) })
}

/// Descriptor field a retrieval hint replaces.
pub fn query_field(registry: &Registry, tool: &str) -> Option<&'static str> {
    let d = registry.descriptor(tool)?;
    (d.capability == Capability::Knowledge)
        .then(|| ["query", "title", "text"].into_iter().find(|f| d.input_schema.contains_key(*f)))
        .flatten()
}
