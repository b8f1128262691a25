mod support;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use geomm::orchestrator::{Budgets, Orchestrator, Planner, SubgoalStatus, Toggles};
use geomm::protocol::{Binding, Capability, OutputKind, Registry, SemanticType, ToolDescriptor, ToolOutput};
use geomm::reasoning::{ScriptRule, ScriptedBackend};
use geomm_core::question::Dataset;
use geomm_core::AnswerStatus;
use serde_json::{json, Value};
use support::{config, dataset, letter, orchestrator, question};

fn answer(c: char) -> AnswerStatus {
    AnswerStatus::Letter(letter(c))
}

fn toggles_without(component: &str) -> Toggles {
    let mut t = Toggles::default();
    t.ablate(component).unwrap();
    t
}

/// A planner that always proposes `plan`.
fn fixed_planner(plan: Value) -> Planner {
    let rule = ScriptRule { when_all: Vec::new(), when_none: Vec::new(), respond: plan };
    Planner::Model(Arc::new(ScriptedBackend::new("fixed", vec![rule])))
}

#[test]
fn band_question_recovers_on_second_iteration() {
    let trace = orchestrator(Toggles::default()).solve(&question("case-band.jsonl"));
    assert_eq!(trace.iterations.len(), 2);
    assert_eq!(trace.iterations[0].candidate, answer('B'));
    assert!(!trace.iterations[0].verdict.as_ref().unwrap().is_success());
    assert_eq!(trace.iterations[1].candidate, answer('D'));
    assert_eq!(trace.final_answer.answer, answer('D'));
    assert!(!trace.budget_exhausted);
}

#[test]
fn retry_reuses_subgoals_the_hint_does_not_touch() {
    let trace = orchestrator(Toggles::default()).solve(&question("case-band.jsonl"));
    let second = &trace.iterations[1].records;
    let knowledge: Vec<_> = second.iter().filter(|r| r.capability == Capability::Knowledge).collect();
    assert!(!knowledge.is_empty() && knowledge.iter().all(|r| !r.reused), "retrieval must run again");
    let inspect = second.iter().find(|r| r.id == "inspect").expect("inspect subgoal");
    assert!(inspect.reused, "inspect does not depend on retrieval");
    let terminal = second.last().unwrap();
    assert!(!terminal.reused, "the answer depends on the hinted retrieval");
}

#[test]
fn aircraft_question_counts_twelve() {
    let trace = orchestrator(Toggles::default()).solve(&question("case-aircraft.jsonl"));
    let it = &trace.iterations[0];
    let count = it.records.iter().find(|r| r.tool == "box_counting").unwrap();
    assert_eq!(count.text(), "12");
    assert_eq!(trace.final_answer.answer, answer('C'));
}

#[test]
fn without_self_evaluation_the_first_candidate_stands() {
    let trace = orchestrator(toggles_without("self-evaluation")).solve(&question("case-band.jsonl"));
    assert_eq!(trace.iterations.len(), 1);
    assert!(trace.iterations[0].verdict.is_none());
    assert_eq!(trace.final_answer.answer, answer('B'));
}

#[test]
fn zero_retries_exhausts_the_budget_with_the_first_candidate() {
    let mut cfg = config();
    cfg.budgets.retries = 0;
    let trace = cfg.orchestrator().unwrap().solve(&question("case-band.jsonl"));
    assert_eq!(trace.iterations.len(), 1);
    assert!(trace.budget_exhausted);
    assert_eq!(trace.final_answer.answer, answer('B'));
}

#[test]
fn empty_plan_yields_invalid() {
    let reg = config().registry().unwrap();
    let orch = Orchestrator::new(reg, toggles_without("self_evaluation"), Budgets::default())
        .with_planner(fixed_planner(json!({"rationale": "nothing to do", "subgoals": [], "edges": []})));
    let trace = orch.solve(&question("case-band.jsonl"));
    assert_eq!(trace.iterations.len(), 1);
    assert!(trace.iterations[0].records.is_empty());
    assert_eq!(trace.final_answer.answer, AnswerStatus::Invalid);
}

#[test]
fn disabled_reasoning_never_appears_in_plans() {
    let outcome = orchestrator(toggles_without("reasoning")).run_benchmark(&dataset("benchmark.jsonl"), 2);
    for t in &outcome.traces {
        for it in &t.iterations {
            assert!(it.plan.subgoals.iter().all(|s| s.capability != Capability::Reasoning), "{}", t.question_id);
            assert!(it.records.iter().all(|r| r.capability != Capability::Reasoning), "{}", t.question_id);
        }
    }
}

#[test]
fn a_timed_out_branch_skips_only_its_dependents() {
    let text = |name: &str| {
        ToolDescriptor::new(name, "Use this tool in tests.", Capability::General, OutputKind::Text).field(
            "text",
            SemanticType::Text,
            false,
        )
    };
    let reg = Registry::new()
        .register_tool(
            text("slow"),
            Binding::handler(|_: &geomm::protocol::Arguments| {
                thread::sleep(Duration::from_secs(2));
                Ok(ToolOutput::text("late"))
            }),
        )
        .unwrap()
        .register_tool(
            text("echo"),
            Binding::handler(|a: &geomm::protocol::Arguments| {
                Ok(ToolOutput::text(a.get("text").and_then(Value::as_str).unwrap_or("A")))
            }),
        )
        .unwrap();
    let plan = json!({
        "rationale": "two independent branches",
        "subgoals": [
            {"id": "slow", "capability": "general", "tool": "slow", "arguments": {}, "purpose": "stall"},
            {"id": "fast", "capability": "general", "tool": "echo", "arguments": {"text": "A"}, "purpose": "answer"},
            {"id": "after_slow", "capability": "general", "tool": "echo",
             "arguments": {"text": {"$ref": "slow", "path": "text"}}, "purpose": "use the slow output"},
            {"id": "final", "capability": "general", "tool": "echo",
             "arguments": {"text": {"$ref": "fast", "path": "text"}}, "purpose": "report"}
        ],
        "edges": [["slow", "after_slow"], ["fast", "final"]]
    });
    let budgets = Budgets { retries: 0, deadline: Duration::from_millis(100) };
    let orch = Orchestrator::new(reg, toggles_without("self_evaluation"), budgets).with_planner(fixed_planner(plan));
    let trace = orch.solve(&question("case-band.jsonl"));
    let status = |id: &str| trace.iterations[0].records.iter().find(|r| r.id == id).unwrap().status;
    assert_eq!(status("slow"), SubgoalStatus::Failed);
    assert_eq!(status("after_slow"), SubgoalStatus::Skipped);
    assert_eq!(status("fast"), SubgoalStatus::Ok);
    assert_eq!(status("final"), SubgoalStatus::Ok);
    assert_eq!(trace.final_answer.answer, answer('A'));
}

fn subset() -> Dataset {
    let keep = ["case-band", "case-aircraft", "ships", "savi", "series-change"];
    let all = dataset("benchmark.jsonl");
    let qs = all.questions().iter().filter(|q| keep.contains(&q.id.as_str())).cloned().collect();
    Dataset::new(qs, "subset").unwrap()
}

#[test]
fn subset_scores_full_marks_and_drops_without_perception() {
    let ds = subset();
    assert_eq!(ds.len(), 5);
    let full = orchestrator(Toggles::default()).run_benchmark(&ds, 2).report.unwrap();
    assert_eq!(full.accuracy_pct, 100.0);
    let blind = orchestrator(toggles_without("perception")).run_benchmark(&ds, 2).report.unwrap();
    assert_eq!((blind.correct, blind.accuracy_pct), (3, 60.0));
}
