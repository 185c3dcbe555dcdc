//! Acceptance suite: one check per criterion, each printing a single
//! PASS/FAIL line. Runs as a plain binary so every criterion reports even
//! when an earlier one fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use stepcode_core::metrics::conflict_stats;
use stepcode_core::reward::{latent_from_prm_scores, latent_from_rollouts, raw_latent, RewardError};
use stepcode_core::{AnswerStatus, ExecStatus, HyperParams, Task};
use stepcode_engine::policy::parse_step;
use stepcode_engine::runtime::{advance, history_entry};
use stepcode_engine::tree::PotentialLabel;
use stepcode_engine::{
    collect_tree, emit_jsonl, estimate_latent_by_rollout, label_pairs, load_jsonl, LatentMode, ProcessTree, RolloutConfig,
    ScriptBook, Session,
};
use stepcode_exec::{Gateway, GatewayConfig, ProxyConfig};
use stepcode_harness::builtin::{
    self, conflict_fixture, script_tree, text, tree_answer, tree_task, TreeNode, CONFLICT_FIXTURE_COUNTS,
    CONFLICT_FIXTURE_PAIRS,
};
use stepcode_harness::commands::{cmd_ablate, cmd_collect, cmd_conflict_stats, cmd_json_baseline, cmd_run};
use stepcode_harness::{ConflictSource, Environment, HarnessConfig, SuiteBundle};
use stepcode_mocktools::MockToolService;

type Check = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn config(out: &Path) -> HarnessConfig {
    let mut cfg = HarnessConfig {
        out: out.to_path_buf(),
        ..HarnessConfig::default()
    };
    cfg.engine.latent_mode = LatentMode::Prm;
    cfg.engine.hp.n_candidates = 2;
    cfg
}

// ---------------------------------------------------------------- 1

/// Independent evaluator: exp((1 - lr) ln a + (tau / L) ln b).
fn latent_oracle(lr: f64, tau: f64, alpha: f64, beta: f64, l: f64) -> f64 {
    ((1.0 - lr) * alpha.ln() + (tau / l) * beta.ln()).exp()
}

fn reward_vectors() -> Check {
    let mut vectors = Vec::new();
    for &(alpha, beta, l) in &[(0.5, 0.9, 10.0), (0.3, 0.7, 4.0), (1.0, 1.0, 1.0), (0.9, 0.5, 25.0)] {
        for &(lr, tau) in &[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0), (0.25, 3.5), (0.75, 12.0), (1.0, 7.0)] {
            vectors.push((lr, tau, alpha, beta, l));
        }
    }
    ensure!(vectors.len() >= 20, "only {} vectors", vectors.len());
    for &(lr, tau, alpha, beta, big_l) in &vectors {
        let hp = HyperParams {
            alpha,
            beta,
            big_l,
            ..HyperParams::default()
        };
        let got = latent_from_rollouts(lr, tau, &hp).map_err(|e| e.to_string())?;
        let want = latent_oracle(lr, tau, alpha, beta, big_l);
        ensure!((got - want).abs() < 1e-9, "({lr}, {tau}, {alpha}, {beta}, {big_l}): {got} vs {want}");
    }
    // corner values that need no evaluator at all
    let hp = HyperParams::default();
    ensure!(latent_from_rollouts(1.0, 0.0, &hp) == Ok(1.0), "solved immediately must be 1");
    ensure!(latent_from_rollouts(0.0, 0.0, &hp) == Ok(0.5), "never solved, no steps must be alpha");

    // ratios: c/t must be the exactly rounded quotient, and exact for dyadic totals
    for t in 1..=64u32 {
        for c in 0..=t {
            let got = raw_latent(c, t).map_err(|e| e.to_string())?;
            ensure!(got == f64::from(c) / f64::from(t), "raw_latent({c}, {t}) = {got}");
            if t.is_power_of_two() {
                ensure!(got * f64::from(t) == f64::from(c), "raw_latent({c}, {t}) not exact");
            }
        }
    }
    ensure!(raw_latent(1, 0) == Err(RewardError::ZeroTotal), "zero total accepted");
    ensure!(raw_latent(3, 2).is_err(), "correct > total accepted");

    // normalization on dyadic rationals: exact
    for &(yes, no, want) in &[
        (1.0, 1.0, 0.5),
        (3.0, 1.0, 0.75),
        (7.0, 1.0, 0.875),
        (0.0, 2.0, 0.0),
        (5.0, 0.0, 1.0),
        (0.375, 0.125, 0.75),
        (9.0, 7.0, 0.5625),
    ] {
        let got = latent_from_prm_scores(yes, no).map_err(|e| e.to_string())?;
        ensure!(got == want, "prm({yes}, {no}) = {got}, want {want}");
    }
    ensure!(latent_from_prm_scores(0.0, 0.0).is_err(), "degenerate PRM scores accepted");
    Ok(format!("{} latent vectors, 2144 ratios, 7 normalizations", vectors.len()))
}

// ---------------------------------------------------------------- 2

const ENTRY: &str = "seen = []";

fn random_tree(rng: &mut ChaCha8Rng, depth: u32) -> TreeNode {
    if depth == 0 || rng.random_bool(0.3) {
        TreeNode::Final {
            correct: rng.random_bool(0.5),
        }
    } else {
        TreeNode::Continue {
            ok: rng.random_bool(0.8),
            children: Box::new([random_tree(rng, depth - 1), random_tree(rng, depth - 1)]),
        }
    }
}

/// Brute-force walk: (solved, steps) for every leaf reachable within
/// `limit` committed steps, the evaluated step being step 1.
fn tree_walk(nodes: &[TreeNode; 2], depth: u32, steps: u32, limit: u32, out: &mut Vec<(bool, u32)>) {
    for n in nodes {
        let (depth, steps) = (depth + 1, steps + 1);
        match n {
            TreeNode::Final { correct } => out.push((*correct, steps)),
            TreeNode::Continue { .. } if depth >= limit => out.push((false, steps)),
            TreeNode::Continue { children, .. } => tree_walk(children, depth, steps, limit, out),
        }
    }
}

fn bundle_with(id: &str, book: ScriptBook, max_depth: u32) -> SuiteBundle {
    let mut bundle = builtin::tree_bundle("scratch", vec![]);
    bundle.suite.tasks.push(tree_task(id, &tree_answer(id), max_depth));
    bundle.scripts = book;
    bundle
}

fn rollout_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let limit = 4;
    let mut leaves_seen = 0;
    for k in 0..10 {
        let id = format!("scenario-{k}");
        // up to four levels below the evaluated step; the bound cuts the deepest
        let height = 2 + k % 3;
        let roots = [random_tree(&mut rng, height), random_tree(&mut rng, height)];
        let mut book = ScriptBook::new();
        script_tree(&mut book, &id, &[ENTRY.to_string()], &roots, &tree_answer(&id));
        let bundle = bundle_with(&id, book, 8);
        let env = Environment::start(&config(dir.path()), &bundle).map_err(|e| e.to_string())?;
        let task = &bundle.suite.tasks[0];
        let hp = HyperParams {
            max_depth: limit,
            ..HyperParams::default()
        };
        let root = Session::open(&env.gateway, task).map_err(|e| e.to_string())?;
        let step = parse_step(&text("evaluated", ENTRY), 1).map_err(|e| e.to_string())?;
        let (state, exec) = advance(&root, &step, 5_000).map_err(|e| e.to_string())?;
        let est = estimate_latent_by_rollout(
            task,
            &state,
            &[history_entry(&step, &exec)],
            &env.runtime(),
            &hp,
            &RolloutConfig::exhaustive(),
        )
        .map_err(|e| e.to_string())?;
        let stats = est.rollout_stats.ok_or("no rollout stats")?;

        let mut leaves = Vec::new();
        tree_walk(&roots, 1, 0, limit, &mut leaves);
        let total = leaves.len() as u32;
        let correct = leaves.iter().filter(|l| l.0).count() as u32;
        let step_sum: u32 = leaves.iter().map(|l| l.1).sum();
        let tau = f64::from(step_sum) / f64::from(total);
        let lr = f64::from(correct) / f64::from(total);
        let want = latent_oracle(lr, tau, 0.5, 0.9, 10.0);
        ensure!(
            (stats.delta_correct, stats.delta_total) == (correct, total),
            "{id}: counts ({}, {}) vs ({correct}, {total})",
            stats.delta_correct,
            stats.delta_total
        );
        ensure!(stats.tau == tau, "{id}: tau {} vs {tau}", stats.tau);
        ensure!((est.value - want).abs() < 1e-12, "{id}: value {} vs {want}", est.value);
        leaves_seen += total;
    }
    Ok(format!("10 scenarios, {leaves_seen} enumerated continuations"))
}

// ---------------------------------------------------------------- 3

fn end_to_end_selection() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(dir.path());
    let bundle = SuiteBundle::load("builtin:selection").map_err(|e| e.to_string())?;
    ensure!(bundle.suite.tasks.len() == 20, "suite has {} tasks", bundle.suite.tasks.len());
    let written = cmd_ablate(&cfg, &bundle).map_err(|e| e.to_string())?;
    let by_variant: BTreeMap<_, _> = written.reports.iter().map(|r| (r.variant.as_str(), r)).collect();
    let full = by_variant.get("full").ok_or("no full report")?;
    let spot_off = by_variant.get("spot_off").ok_or("no spot_off report")?;
    ensure!(full.failures.is_empty() && spot_off.failures.is_empty(), "task failures");
    let full_scep = full.overall.scep.ok_or("full SCEP undefined")?;
    let off_scep = spot_off.overall.scep.ok_or("spot_off SCEP undefined")?;
    ensure!(full.overall.sopr == 1.0, "full SoPR {}", full.overall.sopr);
    ensure!(full_scep == 1.0, "full SCEP {full_scep}");
    ensure!(off_scep <= 0.75, "spot_off SCEP {off_scep}");
    ensure!(
        spot_off.overall.sopr < full.overall.sopr,
        "spot_off SoPR {} not below {}",
        spot_off.overall.sopr,
        full.overall.sopr
    );
    Ok(format!(
        "full SoPR {:.4} SCEP {:.4}; spot_off SoPR {:.4} SCEP {:.4}",
        full.overall.sopr, full_scep, spot_off.overall.sopr, off_scep
    ))
}

// ---------------------------------------------------------------- 4

fn conflict_counts() -> Check {
    let fixture = conflict_fixture();
    // hand classification straight from the recorded rewards
    let mut counts = [0usize; 4];
    for step in fixture.iter().flat_map(|t| &t.steps) {
        ensure!(step.candidates.len() == 2, "fixture step with {} candidates", step.candidates.len());
        let (a, b) = (&step.candidates[0].rewards, &step.candidates[1].rewards);
        let case = match (a.r_spot + b.r_spot, a.r_spot == 1) {
            (2, _) => 0,
            (0, _) => 1,
            (_, true) if a.latent.value > b.latent.value => 2,
            (_, false) if b.latent.value > a.latent.value => 2,
            _ => 3,
        };
        counts[case] += 1;
    }
    ensure!(counts == CONFLICT_FIXTURE_COUNTS, "hand count {counts:?}");
    ensure!(counts.iter().sum::<usize>() == CONFLICT_FIXTURE_PAIRS, "pair total");

    let dist = conflict_stats(&fixture);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let via_cmd = cmd_conflict_stats(&config(dir.path()), &SuiteBundle::default(), ConflictSource::Trajectories(fixture))
        .map_err(|e| e.to_string())?;
    ensure!(dist == via_cmd, "library and command disagree");
    let tallied: Vec<usize> = ["case1", "case2", "case3", "case4"].iter().map(|c| dist.counts[*c]).collect();
    ensure!(tallied == counts, "library count {tallied:?}");
    let pct_sum: f64 = dist.percentages.values().sum();
    ensure!((pct_sum - 100.0).abs() <= 1e-9, "percentages sum to {pct_sum}");
    for (case, &n) in ["case1", "case2", "case3", "case4"].iter().zip(&counts) {
        let want = 100.0 * n as f64 / CONFLICT_FIXTURE_PAIRS as f64;
        ensure!((dist.percentages[*case] - want).abs() < 1e-12, "{case} percentage");
    }
    Ok(format!(
        "{counts:?} of {}; {:.2}/{:.2}/{:.2}/{:.2}%",
        dist.total, dist.percentages["case1"], dist.percentages["case2"], dist.percentages["case3"], dist.percentages["case4"]
    ))
}

// ---------------------------------------------------------------- 5

fn upstream_total(url: &str) -> Result<u64, String> {
    let stats: Value = ureq::get(&format!("{url}/__stats"))
        .call()
        .map_err(|e| e.to_string())?
        .body_mut()
        .read_json()
        .map_err(|e| e.to_string())?;
    stats["total"].as_u64().ok_or_else(|| "stats without total".into())
}

fn random_statement(rng: &mut ChaCha8Rng) -> String {
    let var = ["a", "b", "c", "d"][rng.random_range(0..4)];
    match rng.random_range(0..6) {
        0 => format!("{var} = {}", rng.random_range(-50..50)),
        1 => format!("{var} = call_tool('record', {{'id': 'rec{:02}'}})['code']", rng.random_range(0..20)),
        2 => format!("log.append('{var}')"),
        3 => format!("{var} = [i * {} for i in range(4)]", rng.random_range(1..5)),
        4 => format!("book['{var}'] = len(log)"),
        _ => format!("missing_{var} + 1"),
    }
}

fn fork_soundness() -> Check {
    let bundle = SuiteBundle::load("builtin:selection").map_err(|e| e.to_string())?;
    let svc = MockToolService::spawn_local(bundle.scenario.clone().unwrap_or_default()).map_err(|e| e.to_string())?;
    let gw = Gateway::new(GatewayConfig {
        proxy: ProxyConfig {
            upstream: svc.url(),
            ..ProxyConfig::default()
        },
        ..GatewayConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let task: Task = bundle.suite.tasks[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe: String = ["a", "b", "c", "d", "log", "book"]
        .iter()
        .map(|v| format!("try:\n    print('{v}', repr({v}))\nexcept NameError:\n    print('{v}', '-')\n"))
        .collect();
    let mut random_calls = 0;
    for n in 0..50 {
        let mut parent = gw.open_session(&task).map_err(|e| e.to_string())?;
        let setup = "log = []\nbook = {}";
        gw.exec_step(&parent, setup, 2_000).map_err(|e| e.to_string())?;
        parent.commit(setup);
        let len = rng.random_range(1..8);
        for _ in 0..len {
            let code = random_statement(&mut rng);
            let r = gw.exec_step(&parent, &code, 2_000).map_err(|e| e.to_string())?;
            random_calls += r.tool_calls.len();
            parent.commit_outcome(code, r.status, 2_000);
        }
        // every prefix ends with a tool call, so every fork replays one
        let code = format!("z = call_tool('record', {{'id': 'rec{:02}'}})", n % 20);
        let r = gw.exec_step(&parent, &code, 2_000).map_err(|e| e.to_string())?;
        ensure!(r.status == ExecStatus::Success, "prefix {n}: tool call failed: {}", r.stderr);
        parent.commit(code);

        let before = upstream_total(&svc.url())?;
        let fork = gw.fork_session(&parent).map_err(|e| e.to_string())?;
        let after = upstream_total(&svc.url())?;
        ensure!(after == before, "prefix {n}: fork made {} upstream requests", after - before);
        let a = gw.exec_step(&parent, &probe, 2_000).map_err(|e| e.to_string())?;
        let b = gw.exec_step(&fork, &probe, 2_000).map_err(|e| e.to_string())?;
        ensure!(a.status == ExecStatus::Success, "prefix {n}: probe failed: {}", a.stderr);
        ensure!(a.stdout.as_bytes() == b.stdout.as_bytes(), "prefix {n}: fork diverged\n{}\n---\n{}", a.stdout, b.stdout);
        gw.close_session(&fork).map_err(|e| e.to_string())?;
        gw.close_session(&parent).map_err(|e| e.to_string())?;
    }
    Ok(format!("50 tool-terminated prefixes ({random_calls} further calls), 0 upstream requests on fork"))
}

// ---------------------------------------------------------------- 6

fn efficiency_direction() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(dir.path());
    let batch = cmd_json_baseline(&cfg, &SuiteBundle::load("builtin:batch").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let ratio = batch.depth_ratio.ok_or("no depth ratio")?;
    ensure!(ratio <= 0.6, "batch depth ratio {ratio}");
    let oversized = cmd_json_baseline(&cfg, &SuiteBundle::load("builtin:oversized").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(!oversized.tasks.is_empty(), "no oversized tasks");
    for t in &oversized.tasks {
        ensure!(t.code_status == AnswerStatus::Solved, "{}: code mode {:?}", t.task_id, t.code_status);
        ensure!(t.json_status == AnswerStatus::Unsolved, "{}: JSON mode {:?}", t.task_id, t.json_status);
        ensure!(t.json_truncated, "{}: JSON observation was not truncated", t.task_id);
    }
    Ok(format!(
        "batch depth {:.2} vs {:.2} (ratio {ratio:.3}); oversized Solved/Unsolved on {} tasks",
        batch.code.avg_depth,
        batch.json.avg_depth,
        oversized.tasks.len()
    ))
}

// ---------------------------------------------------------------- 7

fn collect_one(roots: &[TreeNode; 2], id: &str) -> Result<ProcessTree, String> {
    let mut book = ScriptBook::new();
    script_tree(&mut book, id, &[], roots, &tree_answer(id));
    let bundle = bundle_with(id, book, 8);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = Environment::start(&config(dir.path()), &bundle).map_err(|e| e.to_string())?;
    collect_tree(
        &bundle.suite.tasks[0],
        &env.runtime(),
        &HyperParams::default(),
        &RolloutConfig::exhaustive(),
        3,
    )
    .map_err(|e| e.to_string())
}

/// Labels and latents of `a` must match those of `b` at the mirrored
/// position, node by node.
fn mirrored_labels_match(a: &ProcessTree, na: usize, b: &ProcessTree, nb: usize) -> bool {
    let (x, y) = (&a.nodes[na], &b.nodes[nb]);
    if x.label != y.label || x.latent.as_ref().map(|l| l.value) != y.latent.as_ref().map(|l| l.value) {
        return false;
    }
    match (&x.children[..], &y.children[..]) {
        ([], []) => true,
        ([x0, x1], [y0, y1]) => mirrored_labels_match(a, *x0, b, *y1) && mirrored_labels_match(a, *x1, b, *y0),
        _ => false,
    }
}

fn prm_pipeline() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut total_pairs = 0;
    for k in 0..100 {
        let id = format!("rand-{k:03}");
        let roots = [random_tree(&mut rng, 3), random_tree(&mut rng, 3)];
        let tree = collect_one(&roots, &id)?;
        let pairs = label_pairs(&tree);
        for p in &pairs {
            ensure!(p.chosen_latent > p.rejected_latent, "{id}: {} <= {}", p.chosen_latent, p.rejected_latent);
        }
        let path = dir.path().join(format!("{id}.jsonl"));
        emit_jsonl(&pairs, &path).map_err(|e| e.to_string())?;
        ensure!(load_jsonl(&path).map_err(|e| e.to_string())? == pairs, "{id}: JSONL round trip");

        let swapped = [roots[1].mirrored(), roots[0].mirrored()];
        let mirror = collect_one(&swapped, &id)?;
        ensure!(mirrored_labels_match(&tree, 0, &mirror, 0), "{id}: labels not antisymmetric under swap");
        let latents = |ps: &[stepcode_engine::PrmPair]| {
            let mut v: Vec<(u64, u64)> = ps.iter().map(|p| (p.chosen_latent.to_bits(), p.rejected_latent.to_bits())).collect();
            v.sort_unstable();
            v
        };
        ensure!(latents(&pairs) == latents(&label_pairs(&mirror)), "{id}: mirrored pairs differ");
        let more = tree.nodes.iter().filter(|n| n.label == Some(PotentialLabel::MorePotential)).count();
        ensure!(more == pairs.len(), "{id}: {more} labelled nodes for {} pairs", pairs.len());
        total_pairs += pairs.len();
    }
    Ok(format!("100 trees, {total_pairs} pairs"))
}

// ---------------------------------------------------------------- 8

fn files_under(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap_or(&path).to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn one_pass(out: &Path) -> Result<(), String> {
    let cfg = config(out);
    let selection = SuiteBundle::load("builtin:selection").map_err(|e| e.to_string())?;
    cmd_run(&cfg, &selection).map_err(|e| e.to_string())?;
    let mut rollout_cfg = HarnessConfig {
        out: out.join("rollout"),
        ..HarnessConfig::default()
    };
    rollout_cfg.engine.hp.rng_seed = 11;
    cmd_run(&rollout_cfg, &SuiteBundle::load("builtin:trees").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    cmd_collect(
        &HarnessConfig {
            out: out.join("collect"),
            ..cfg.clone()
        },
        &SuiteBundle::load("builtin:trees").map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    cmd_json_baseline(
        &HarnessConfig {
            out: out.join("json"),
            ..cfg
        },
        &SuiteBundle::load("builtin:batch").map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    Ok(())
}

fn determinism() -> Check {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    one_pass(a.path())?;
    one_pass(b.path())?;
    let (fa, fb) = (files_under(a.path())?, files_under(b.path())?);
    ensure!(fa.len() > 20, "only {} files written", fa.len());
    ensure!(
        fa.keys().eq(fb.keys()),
        "file sets differ: {:?} vs {:?}",
        fa.keys().collect::<Vec<_>>(),
        fb.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &fa {
        ensure!(&fb[path] == bytes, "{} differs between runs", path.display());
    }
    Ok(format!("{} files byte-identical", fa.len()))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "reward formula vectors", Duration::from_secs(1), reward_vectors),
        (2, "rollout oracle equivalence", Duration::from_secs(30), rollout_oracle),
        (3, "end-to-end selection", Duration::from_secs(120), end_to_end_selection),
        (4, "conflict statistics", Duration::from_secs(60), conflict_counts),
        (5, "fork soundness and cache", Duration::from_secs(120), fork_soundness),
        (6, "efficiency direction", Duration::from_secs(120), efficiency_direction),
        (7, "PRM data pipeline", Duration::from_secs(300), prm_pipeline),
        (8, "determinism", Duration::from_secs(300), determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{elapsed:.2?}] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{elapsed:.2?}] {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
