use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomm::config::{RunConfig, EXIT_CONFIG, EXIT_RUNTIME};
use geomm::harness::{self, Layout};
use geomm::orchestrator::{extract_predictions, ExecutionTrace, Iteration, SubgoalStatus};
use geomm::protocol::{server, Capability};
use geomm::run::{self, RunRecord};
use geomm::tools::general;
use geomm_core::question::Dataset;
use geomm_core::{random_baseline, score, AccuracyReport, ScoreError};

#[derive(Parser)]
#[command(name = "geomm", version, about = "Tool-augmented agent for multimodal geospatial multiple-choice questions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every question of a dataset and write a run directory.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Solve one question and print the phases of its trace.
    Solve {
        /// File holding exactly one question record.
        #[arg(long)]
        question: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// Write the trace file without printing anything.
        #[arg(long)]
        trace_only: bool,
    },
    /// Score a predictions file, or a random-choice baseline.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "random_baseline")]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Layout::Text)]
        layout: Layout,
        #[arg(long, conflicts_with = "predictions")]
        random_baseline: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        trials: u32,
    },
    /// Render a machine-layout report, or the report of a run directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Layout::Text)]
        layout: Layout,
    },
    /// Serve one toolkit over standard input and output.
    ServeTools {
        #[arg(long, value_enum)]
        toolkit: Toolkit,
        /// Backend configuration; not needed for the general toolkit.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a dataset file against the question schema.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    /// Switch off a component: knowledge, perception, reasoning or
    /// self-evaluation. Repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    /// Questions solved in parallel. Default: the config value, else the
    /// available cores.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toolkit {
    General,
    Knowledge,
    Perception,
    Reasoning,
}

impl Toolkit {
    fn capability(self) -> Capability {
        match self {
            Toolkit::General => Capability::General,
            Toolkit::Knowledge => Capability::Knowledge,
            Toolkit::Perception => Capability::Perception,
            Toolkit::Reasoning => Capability::Reasoning,
        }
    }
}

/// A failed command: exit status and a one-line cause.
struct Failure {
    code: i32,
    message: String,
}

fn config_error(e: impl ToString) -> Failure {
    Failure { code: EXIT_CONFIG, message: e.to_string() }
}

fn runtime_error(e: impl ToString) -> Failure {
    Failure { code: EXIT_RUNTIME, message: e.to_string() }
}

type Outcome = Result<(), Failure>;

impl RunFlags {
    /// The config file with command-line overrides applied.
    fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::load(&self.config).map_err(config_error)?;
        for a in &self.ablate {
            cfg.toggles.ablate(a).map_err(config_error)?;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w as usize);
        }
        if let Some(r) = self.retries {
            cfg.budgets.retries = r;
        }
        if let Some(d) = &self.run_dir {
            cfg.run_dir = Some(std::env::current_dir().map_err(runtime_error)?.join(d));
        }
        Ok(cfg)
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    let ds = harness::load_dataset(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(harness::resolve_images(&ds, path.parent().unwrap_or(Path::new("."))))
}

fn score_error(e: ScoreError) -> Failure {
    match e {
        ScoreError::EmptyDataset => runtime_error(e),
        _ => config_error(e),
    }
}

fn cmd_run(dataset: &Path, flags: &RunFlags) -> Outcome {
    let cfg = flags.load()?;
    let ds = load_dataset(dataset)?;
    let orchestrator = cfg.orchestrator().map_err(config_error)?;
    let started_at = run::unix_secs();
    let workers = cfg.workers();
    let outcome = orchestrator.run_benchmark(&ds, workers);
    let record = RunRecord {
        outcome: &outcome,
        config: orchestrator.snapshot(),
        seed: cfg.seed,
        workers,
        dataset: ds.provenance().to_string(),
        started_at,
    };
    let (_, dir) = run::persist(&cfg.run_dir(), record).map_err(runtime_error)?;
    let report = outcome.report.map_err(runtime_error)?;
    print!("{}", harness::render_text(&report));
    println!("Run directory: {}", dir.display());
    Ok(())
}

fn excerpt(s: &str) -> String {
    let one_line = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if one_line.chars().count() > 100 {
        one_line.chars().take(100).collect::<String>() + "…"
    } else {
        one_line
    }
}

fn print_execution(it: &Iteration) {
    for r in &it.records {
        let status = match r.status {
            SubgoalStatus::Ok if r.reused => "reused",
            SubgoalStatus::Ok => "ok",
            SubgoalStatus::Failed => "failed",
            SubgoalStatus::Skipped => "skipped",
        };
        let detail = if r.is_ok() { r.text() } else { r.error.clone().unwrap_or_default() };
        println!("  [{}] {} ({status}): {}", r.id, r.tool, excerpt(&detail));
    }
    let candidate = it.candidate.letter().map_or_else(|| "invalid".to_string(), |l| l.to_string());
    println!("  Candidate answer: {candidate}");
}

/// Prints the trace as numbered phases: planning, execution and
/// self-evaluation, then re-execution and self-evaluation per retry.
fn print_phases(trace: &ExecutionTrace) {
    let mut phase = 0;
    let mut heading = |title: String| {
        phase += 1;
        println!("Phase {phase}: {title}");
    };
    for it in &trace.iterations {
        if it.index == 0 {
            heading(format!("Task decomposition ({})", it.planner));
            for s in &it.plan.subgoals {
                println!("  {} -> {}: {}", s.id, s.tool, s.purpose);
            }
            heading("Execution".into());
        } else {
            heading("Re-execution with revised plan".into());
        }
        print_execution(it);
        if let Some(v) = &it.verdict {
            heading("Self-evaluation".into());
            let status = if v.is_success() { "success" } else { "failure" };
            let confidence = format!("{:?}", v.confidence).to_lowercase();
            println!("  {status} ({confidence} confidence): {}", v.analysis);
            for h in &v.revision_hints {
                println!("  hint for {}: {}", h.subgoal, h.hint);
            }
        }
    }
    if let Some(e) = &trace.error {
        println!("Error: {e}");
    }
    let answer = trace.final_answer.answer.letter().map_or_else(|| "invalid".to_string(), |l| l.to_string());
    let exhausted = if trace.budget_exhausted { " (retry budget exhausted)" } else { "" };
    println!("Final answer: {answer}{exhausted}");
}

fn cmd_solve(question: &Path, flags: &RunFlags, trace_only: bool) -> Outcome {
    let cfg = flags.load()?;
    let ds = load_dataset(question)?;
    let [q] = ds.questions() else {
        return Err(config_error(format!("{}: expected exactly one question, found {}", question.display(), ds.len())));
    };
    let orchestrator = cfg.orchestrator().map_err(config_error)?;
    let trace = orchestrator.solve(q);
    let (_, dir) =
        run::create_run_dir(&cfg.run_dir(), run::unix_secs(), &orchestrator.snapshot()).map_err(runtime_error)?;
    let files = run::write_traces(&dir, std::slice::from_ref(&trace)).map_err(runtime_error)?;
    if !trace_only {
        print_phases(&trace);
        println!("Trace: {}", dir.join(&files[0].1).display());
    }
    Ok(())
}

fn cmd_score(
    dataset: &Path,
    predictions: Option<&Path>,
    layout: Layout,
    baseline: bool,
    seed: u64,
    trials: u32,
) -> Outcome {
    let ds = load_dataset(dataset)?;
    let report: AccuracyReport = if baseline {
        random_baseline(&ds, seed, trials).map_err(score_error)?
    } else {
        let path = predictions.expect("clap requires predictions without a baseline");
        let preds = harness::load_predictions(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        score(&extract_predictions(&preds, &ds), &ds).map_err(score_error)?
    };
    print!("{}", harness::render_report(&report, layout));
    Ok(())
}

fn cmd_report(input: &Path, layout: Layout) -> Outcome {
    let path = if input.is_dir() { input.join(run::REPORT_MACHINE_FILE) } else { input.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let report = harness::parse_machine_report(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    print!("{}", harness::render_report(&report, layout));
    Ok(())
}

fn cmd_serve(toolkit: Toolkit, config: Option<&Path>) -> Outcome {
    let registry = match (toolkit, config) {
        (Toolkit::General, None) => general::registry(),
        (_, None) => return Err(config_error("--config is required for this toolkit")),
        (_, Some(c)) => {
            let cfg = RunConfig::load(c).map_err(config_error)?;
            let others: Vec<Capability> =
                Capability::ALL.iter().copied().filter(|c| *c != toolkit.capability()).collect();
            cfg.registry().map_err(config_error)?.without_capabilities(&others)
        }
    };
    if registry.is_empty() {
        return Err(config_error("the selected toolkit has no configured tools"));
    }
    let stdin = io::stdin();
    server::serve(&registry, BufReader::new(stdin.lock()), io::stdout().lock()).map_err(runtime_error)
}

fn cmd_validate(dataset: &Path) -> Outcome {
    let ds = harness::load_dataset(dataset).map_err(|e| config_error(format!("{}: {e}", dataset.display())))?;
    let splits: Vec<String> = ds.split_counts().iter().map(|(s, n)| format!("{s} {n}")).collect();
    println!("{}: {} questions ({})", dataset.display(), ds.len(), splits.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { dataset, run } => cmd_run(dataset, run),
        Command::Solve { question, run, trace_only } => cmd_solve(question, run, *trace_only),
        Command::Score { dataset, predictions, layout, random_baseline, seed, trials } => {
            cmd_score(dataset, predictions.as_deref(), *layout, *random_baseline, *seed, *trials)
        }
        Command::Report { input, layout } => cmd_report(input, *layout),
        Command::ServeTools { toolkit, config } => cmd_serve(*toolkit, config.as_deref()),
        Command::Validate { dataset } => cmd_validate(dataset),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
