use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stepcode_harness::builtin::conflict_fixture;
use stepcode_harness::commands::{cmd_ablate, cmd_collect, cmd_conflict_stats, cmd_json_baseline, cmd_report, cmd_run};
use stepcode_harness::report::read_trajectories;
use stepcode_harness::{BenchmarkSuite, ConflictSource, HarnessConfig, HarnessError, SuiteBundle};
use tracing_subscriber::EnvFilter;

/// Exit code for a run that finished with per-task failures.
const EXIT_RUN_FAILURES: u8 = 3;
const CONFLICT_FIXTURE: &str = "builtin:conflict-497";

#[derive(Debug, Parser)]
#[command(name = "stepcode", version, about = "Reward-guided stepwise tool invocation: runs, ablations, data collection and reports")]
struct Cli {
    /// JSON config file; defaults apply to every omitted field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario file for the local mock tool service.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Suite: `builtin:<name>` or a suite bundle file.
    #[arg(long, global = true)]
    suite: Option<String>,
    /// Concurrent tasks.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured engine over the suite and write a metrics report.
    Run,
    /// Run the full, spot-off and latent-off variants.
    Ablate,
    /// Collect process-reward preference pairs into pairs.jsonl.
    Collect {
        /// Tree depth cap.
        #[arg(long)]
        depth_cap: Option<usize>,
    },
    /// Classify two-candidate steps into the four reward-conflict cases.
    ConflictStats {
        /// Trajectory directory or `builtin:conflict-497`; omitted, the
        /// suite is run with two candidates per step.
        #[arg(long)]
        input: Option<String>,
    },
    /// Compare code mode with the truncating JSON-mode baseline.
    JsonBaseline {
        /// Observation budget in bytes.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Recompute a report from a directory of trajectory files.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a builtin suite bundle to a file for editing.
    ExportSuite {
        #[arg(long)]
        to: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<HarnessConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => HarnessConfig::load(path)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.engine.hp.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(scenario) = &cli.scenario {
        cfg.scenario = Some(scenario.clone());
    }
    if let Some(suite) = &cli.suite {
        cfg.suite = suite.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Command::Collect { depth_cap: Some(d) } = cli.command {
        cfg.tree_depth_cap = d;
    }
    if let Command::JsonBaseline { budget: Some(b) } = cli.command {
        cfg.json_truncation_bytes = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(value: &impl serde::Serialize) {
    emit(&serde_json::to_string_pretty(value).unwrap_or_default());
}

fn execute(cli: &Cli) -> Result<u8, HarnessError> {
    let cfg = config(cli)?;
    let with_failures = |n: usize| if n > 0 { EXIT_RUN_FAILURES } else { 0 };
    match &cli.command {
        Command::Run | Command::Ablate => {
            let bundle = SuiteBundle::load(&cfg.suite)?;
            let written = match cli.command {
                Command::Run => cmd_run(&cfg, &bundle)?,
                _ => cmd_ablate(&cfg, &bundle)?,
            };
            for r in &written.reports {
                emit(&format!(
                    "{} {}: tasks={} sopr={:.4} scep={} avg_depth={:.3} total_tokens={} failures={}",
                    r.suite,
                    r.variant,
                    r.overall.tasks,
                    r.overall.sopr,
                    r.overall.scep.map_or("n/a".into(), |s| format!("{s:.4}")),
                    r.overall.avg_depth,
                    r.overall.total_tokens,
                    r.failures.len()
                ));
            }
            Ok(with_failures(written.failures()))
        }
        Command::Collect { .. } => {
            let bundle = SuiteBundle::load(&cfg.suite)?;
            let summary = cmd_collect(&cfg, &bundle)?;
            print_json(&summary);
            Ok(with_failures(summary.failures.len()))
        }
        Command::ConflictStats { input } => {
            let source = match input.as_deref() {
                Some(CONFLICT_FIXTURE) => ConflictSource::Trajectories(conflict_fixture()),
                Some(dir) => ConflictSource::Trajectories(read_trajectories(dir.as_ref())?),
                None => ConflictSource::Run,
            };
            let bundle = match source {
                ConflictSource::Run => SuiteBundle::load(&cfg.suite)?,
                _ => SuiteBundle::default(),
            };
            print_json(&cmd_conflict_stats(&cfg, &bundle, source)?);
            Ok(0)
        }
        Command::JsonBaseline { .. } => {
            let bundle = SuiteBundle::load(&cfg.suite)?;
            let report = cmd_json_baseline(&cfg, &bundle)?;
            print_json(&report);
            Ok(0)
        }
        Command::Report { input } => {
            let suite = match &cli.suite {
                Some(_) => SuiteBundle::load(&cfg.suite)?.suite,
                None => BenchmarkSuite {
                    name: input.display().to_string(),
                    ..BenchmarkSuite::default()
                },
            };
            let written = cmd_report(&cfg, &suite, input)?;
            print_json(&written.reports[0]);
            Ok(0)
        }
        Command::ExportSuite { to } => {
            SuiteBundle::load(&cfg.suite)?.save(to)?;
            emit(&to.display().to_string());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
