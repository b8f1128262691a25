//! Tool-augmented agent for multimodal geospatial multiple-choice questions.
//!
//! A question is planned into a graph of subgoals, each bound to a tool in
//! a [`protocol::Registry`]. Tools run in-process or behind a line-delimited
//! JSON-RPC server. The [`orchestrator`] executes the plan, asks an
//! evaluator to judge the candidate answer, and re-runs only the subgoals a
//! failed verdict touches. [`harness`] loads datasets and renders accuracy
//! reports; [`run`] writes the per-run artifacts.

pub mod config;
pub mod harness;
pub mod image_io;
pub mod knowledge;
pub mod orchestrator;
pub mod perception;
pub mod prompts;
pub mod protocol;
pub mod reasoning;
pub mod run;
pub mod tools;
