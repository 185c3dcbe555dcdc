//! The harness subcommands. Each writes its artifacts under `cfg.out` and
//! returns what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepcode_core::judge::sopr;
use stepcode_core::metrics::{conflict_stats, ConflictDistribution};
use stepcode_core::{par, AnswerStatus, Task, Trajectory};
use stepcode_engine::{collect_tree, emit_jsonl, label_pairs, run_task_recorded, EngineConfig, PrmPair};

use crate::config::HarnessConfig;
use crate::env::Environment;
use crate::error::{HarnessError, Result};
use crate::jsonmode::{run_json_task, JsonRun};
use crate::report::{
    build_report, file_stem, write_conflict, write_json, write_reports, write_trajectories, MetricsReport, TaskFailure,
};
use crate::suite::{BenchmarkSuite, SuiteBundle};

/// Name of an engine configuration's ablation variant.
pub fn variant_name(engine: &EngineConfig) -> &'static str {
    match (engine.spot_enabled, engine.latent_enabled) {
        (true, true) => "full",
        (false, true) => "spot_off",
        (true, false) => "latent_off",
        (false, false) => "spot_off_latent_off",
    }
}

/// The variants `ablate` runs, derived from the configured engine.
pub fn ablation_variants(base: &EngineConfig) -> Vec<EngineConfig> {
    [(true, true), (false, true), (true, false)]
        .into_iter()
        .map(|(spot, latent)| EngineConfig {
            spot_enabled: spot,
            latent_enabled: latent,
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<TaskFailure>,
}

/// Run every task; failures are recorded on their (Unsolved) trajectories.
pub fn run_suite(env: &Environment, tasks: &[Task], engine: &EngineConfig, workers: usize) -> Result<SuiteRun> {
    let scorer = env.scorer(engine)?;
    let rt = env.runtime();
    let results = par::map_bounded(tasks, workers, |task| run_task_recorded(task, engine, &rt, scorer.as_ref()));
    let mut run = SuiteRun {
        trajectories: Vec::with_capacity(results.len()),
        failures: Vec::new(),
    };
    for (traj, err) in results {
        if let Some(e) = err {
            tracing::warn!(task = %traj.task_id, error = %e, "task failed");
            run.failures.push(TaskFailure {
                task_id: traj.task_id.clone(),
                error: e.to_string(),
            });
        }
        run.trajectories.push(traj);
    }
    Ok(run)
}

fn require_tasks(suite: &BenchmarkSuite) -> Result<()> {
    if suite.tasks.is_empty() {
        return Err(HarnessError::Config(format!("suite '{}' has no tasks", suite.name)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Written {
    pub reports: Vec<MetricsReport>,
    pub files: Vec<PathBuf>,
}

impl Written {
    pub fn failures(&self) -> usize {
        self.reports.iter().map(|r| r.failures.len()).sum()
    }
}

fn run_variants(cfg: &HarnessConfig, bundle: &SuiteBundle, variants: &[EngineConfig], stem: &str) -> Result<Written> {
    require_tasks(&bundle.suite)?;
    let env = Environment::start(cfg, bundle)?;
    let mut reports = Vec::new();
    for engine in variants {
        let variant = variant_name(engine);
        tracing::info!(suite = %bundle.suite.name, variant, tasks = bundle.suite.tasks.len(), "running suite");
        let run = run_suite(&env, &bundle.suite.tasks, engine, cfg.workers)?;
        write_trajectories(&run.trajectories, &cfg.out.join("trajectories").join(variant))?;
        reports.push(build_report(&bundle.suite, variant, &run.trajectories, run.failures)?);
    }
    let (j, c) = write_reports(&reports, &cfg.out, stem)?;
    Ok(Written {
        reports,
        files: vec![j, c],
    })
}

/// `run`: the configured engine over the suite.
pub fn cmd_run(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<Written> {
    run_variants(cfg, bundle, std::slice::from_ref(&cfg.engine), "report")
}

/// `ablate`: full, spot-off and latent-off over the same suite.
pub fn cmd_ablate(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<Written> {
    run_variants(cfg, bundle, &ablation_variants(&cfg.engine), "ablation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub suite: String,
    pub depth_cap: usize,
    pub pairs: usize,
    pub pairs_per_task: BTreeMap<String, usize>,
    pub nodes_per_task: BTreeMap<String, usize>,
    pub failures: Vec<TaskFailure>,
}

/// Collect preference pairs for every task of the suite, in task order.
pub fn collect_pairs(env: &Environment, bundle: &SuiteBundle, cfg: &HarnessConfig) -> (Vec<PrmPair>, CollectSummary) {
    let engine = &cfg.engine;
    let rt = env.runtime().with_sentinel(&engine.sentinel);
    let trees = par::map_bounded(&bundle.suite.tasks, cfg.workers, |task| {
        collect_tree(task, &rt, &engine.hp, &engine.rollout, cfg.tree_depth_cap)
    });
    let mut summary = CollectSummary {
        suite: bundle.suite.name.clone(),
        depth_cap: cfg.tree_depth_cap,
        pairs: 0,
        pairs_per_task: BTreeMap::new(),
        nodes_per_task: BTreeMap::new(),
        failures: Vec::new(),
    };
    let mut pairs = Vec::new();
    for (task, tree) in bundle.suite.tasks.iter().zip(trees) {
        match tree {
            Ok(tree) => {
                let mut p = label_pairs(&tree);
                summary.pairs_per_task.insert(task.id.clone(), p.len());
                summary.nodes_per_task.insert(task.id.clone(), tree.step_nodes());
                pairs.append(&mut p);
            }
            Err(e) => {
                tracing::warn!(task = %task.id, error = %e, "tree collection failed");
                summary.failures.push(TaskFailure {
                    task_id: task.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    summary.pairs = pairs.len();
    (pairs, summary)
}

/// `collect`: write `pairs.jsonl` and `collect.json`.
pub fn cmd_collect(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<CollectSummary> {
    std::fs::create_dir_all(&cfg.out).map_err(HarnessError::file(&cfg.out))?;
    let (pairs, summary) = if bundle.suite.tasks.is_empty() {
        (
            Vec::new(),
            CollectSummary {
                suite: bundle.suite.name.clone(),
                depth_cap: cfg.tree_depth_cap,
                pairs: 0,
                pairs_per_task: BTreeMap::new(),
                nodes_per_task: BTreeMap::new(),
                failures: Vec::new(),
            },
        )
    } else {
        let env = Environment::start(cfg, bundle)?;
        collect_pairs(&env, bundle, cfg)
    };
    emit_jsonl(&pairs, &cfg.out.join("pairs.jsonl"))?;
    write_json(&summary, &cfg.out.join("collect.json"))?;
    Ok(summary)
}

/// Where `conflict-stats` reads its candidate pairs from.
#[derive(Debug, Clone)]
pub enum ConflictSource {
    Trajectories(Vec<Trajectory>),
    /// Run the suite with two candidates per step.
    Run,
}

/// `conflict-stats`: write `conflict.json` and `conflict.csv`.
pub fn cmd_conflict_stats(cfg: &HarnessConfig, bundle: &SuiteBundle, source: ConflictSource) -> Result<ConflictDistribution> {
    let trajectories = match source {
        ConflictSource::Trajectories(t) => t,
        ConflictSource::Run => {
            require_tasks(&bundle.suite)?;
            let mut engine = cfg.engine.clone();
            engine.hp.n_candidates = 2;
            let env = Environment::start(cfg, bundle)?;
            let run = run_suite(&env, &bundle.suite.tasks, &engine, cfg.workers)?;
            write_trajectories(&run.trajectories, &cfg.out.join("trajectories").join("conflict"))?;
            run.trajectories
        }
    };
    let dist = conflict_stats(&trajectories);
    if dist.total == 0 {
        return Err(HarnessError::Config("no two-candidate steps to classify".into()));
    }
    write_conflict(&dist, &cfg.out)?;
    Ok(dist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: String,
    pub tasks: usize,
    pub sopr: f64,
    pub avg_depth: f64,
    pub total_tokens: u64,
    pub avg_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task_id: String,
    pub code_depth: u32,
    pub json_depth: u32,
    pub code_status: AnswerStatus,
    pub json_status: AnswerStatus,
    pub json_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonBaselineReport {
    pub suite: String,
    pub truncation_bytes: usize,
    pub code: ModeMetrics,
    pub json: ModeMetrics,
    /// Code-mode average depth over JSON-mode average depth.
    pub depth_ratio: Option<f64>,
    pub tasks: Vec<TaskComparison>,
}

fn mode_metrics(mode: &str, rows: &[(u32, u64, AnswerStatus)]) -> Result<ModeMetrics> {
    let statuses: Vec<AnswerStatus> = rows.iter().map(|r| r.2).collect();
    let n = rows.len() as f64;
    let total_tokens: u64 = rows.iter().map(|r| r.1).sum();
    Ok(ModeMetrics {
        mode: mode.into(),
        tasks: rows.len(),
        sopr: sopr(&statuses).map_err(|_| HarnessError::Config("no tasks".into()))?,
        avg_depth: rows.iter().map(|r| f64::from(r.0)).sum::<f64>() / n,
        total_tokens,
        avg_tokens: total_tokens as f64 / n,
    })
}

#[derive(Debug, Serialize)]
struct ModeRow<'a> {
    mode: &'a str,
    tasks: usize,
    sopr: f64,
    avg_depth: f64,
    total_tokens: u64,
    avg_tokens: f64,
}

/// `json-baseline`: the code-mode engine and the truncating JSON-mode loop
/// over the same suite.
pub fn cmd_json_baseline(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<JsonBaselineReport> {
    require_tasks(&bundle.suite)?;
    let env = Environment::start(cfg, bundle)?;
    let code = run_suite(&env, &bundle.suite.tasks, &cfg.engine, cfg.workers)?;
    write_trajectories(&code.trajectories, &cfg.out.join("trajectories").join("code"))?;

    let proxy = env.gateway.proxy().clone();
    let json_runs: Vec<JsonRun> = par::map_bounded(&bundle.suite.tasks, cfg.workers, |task| {
        let actions = bundle.json_scripts.tasks.get(&task.id).map(Vec::as_slice).unwrap_or(&[]);
        run_json_task(task, actions, &proxy, env.judge(), cfg.json_truncation_bytes)
    });
    let runs_dir = cfg.out.join("json_runs");
    std::fs::create_dir_all(&runs_dir).map_err(HarnessError::file(&runs_dir))?;
    for r in &json_runs {
        write_json(r, &runs_dir.join(format!("{}.json", file_stem(&r.task_id))))?;
    }

    let code_rows: Vec<(u32, u64, AnswerStatus)> = code
        .trajectories
        .iter()
        .map(|t| (t.depth, t.total_tokens, t.answer_status.unwrap_or(AnswerStatus::Unsolved)))
        .collect();
    let json_rows: Vec<(u32, u64, AnswerStatus)> =
        json_runs.iter().map(|r| (r.depth, r.total_tokens, r.answer_status)).collect();
    let code_m = mode_metrics("code", &code_rows)?;
    let json_m = mode_metrics("json", &json_rows)?;
    let tasks = code
        .trajectories
        .iter()
        .zip(&json_runs)
        .map(|(t, j)| TaskComparison {
            task_id: t.task_id.clone(),
            code_depth: t.depth,
            json_depth: j.depth,
            code_status: t.answer_status.unwrap_or(AnswerStatus::Unsolved),
            json_status: j.answer_status,
            json_truncated: j.turns.iter().any(|t| t.truncated),
        })
        .collect();
    let report = JsonBaselineReport {
        suite: bundle.suite.name.clone(),
        truncation_bytes: cfg.json_truncation_bytes,
        depth_ratio: (json_m.avg_depth > 0.0).then(|| code_m.avg_depth / json_m.avg_depth),
        code: code_m,
        json: json_m,
        tasks,
    };
    write_json(&report, &cfg.out.join("json_baseline.json"))?;
    let csv_path = cfg.out.join("json_baseline.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for m in [&report.code, &report.json] {
        w.serialize(ModeRow {
            mode: &m.mode,
            tasks: m.tasks,
            sopr: m.sopr,
            avg_depth: m.avg_depth,
            total_tokens: m.total_tokens,
            avg_tokens: m.avg_tokens,
        })?;
    }
    w.flush().map_err(HarnessError::file(&csv_path))?;
    Ok(report)
}

/// `report`: recompute metrics from trajectory files in `input`.
pub fn cmd_report(cfg: &HarnessConfig, suite: &BenchmarkSuite, input: &Path) -> Result<Written> {
    let trajectories = crate::report::read_trajectories(input)?;
    let variant = input.file_name().and_then(|n| n.to_str()).unwrap_or("report").to_string();
    let failures = trajectories
        .iter()
        .filter_map(|t| {
            t.error.as_ref().map(|e| TaskFailure {
                task_id: t.task_id.clone(),
                error: e.clone(),
            })
        })
        .collect();
    let report = build_report(suite, &variant, &trajectories, failures)?;
    let (j, c) = write_reports(std::slice::from_ref(&report), &cfg.out, "report")?;
    Ok(Written {
        reports: vec![report],
        files: vec![j, c],
    })
}
