//! Built-in offline suites and fixtures, addressable as `builtin:<name>`.
//!
//! * `selection`: 20 three-step tasks, each step offering one working
//!   candidate and one broken one. In the `adversarial` subset the scripted
//!   PRM prefers the broken candidate; in `benign` it prefers the working one.
//! * `batch`: tasks needing four to six lookups that code mode does in one
//!   loop and JSON mode does one call per turn.
//! * `oversized`: the answer-critical key sits beyond the first 64 KiB of a
//!   response.
//! * `trees`: scripted binary continuation trees for data collection.

use serde_json::json;
use stepcode_core::reward::select_candidate;
use stepcode_core::{
    whitespace_token_count, AnswerOracle, AnswerStatus, CandidateRecord, CodeStep, ExecStatus, ExecutionResult,
    HttpMethod, LatentEstimate, ParamKind, ParamSpec, RewardBundle, StepRecord, Task, ToolDoc, Trajectory,
};
use stepcode_engine::ScriptBook;
use stepcode_mocktools::{FailureMode, PrmRule, PrmScores, ResponseRule, Scenario};

use crate::error::{HarnessError, Result};
use crate::jsonmode::{JsonAction, JsonScriptBook};
use crate::suite::{BenchmarkSuite, SuiteBundle};

pub const BUILTIN_SUITES: [&str; 4] = ["selection", "batch", "oversized", "trees"];

/// Marker the scripted PRM rewards heavily; carried by broken candidates in
/// adversarial tasks.
pub const SHORTCUT_MARKER: &str = "# shortcut";
/// Marker the scripted PRM rewards moderately.
pub const VERIFIED_MARKER: &str = "# verified";

pub const SELECTION_TASKS: usize = 20;
pub const SELECTION_MAX_DEPTH: u32 = 4;
/// Payload size of the oversized route.
pub const OVERSIZED_BYTES: usize = 65_536;

pub fn suite(name: &str) -> Result<SuiteBundle> {
    match name {
        "selection" => Ok(selection_suite()),
        "batch" => Ok(batch_suite()),
        "oversized" => Ok(oversized_suite()),
        "trees" => Ok(trees_suite()),
        other => Err(HarnessError::Usage(format!(
            "unknown builtin suite '{other}' (available: {})",
            BUILTIN_SUITES.join(", ")
        ))),
    }
}

pub fn text(thought: &str, code: &str) -> String {
    format!("{thought}\n```python\n{code}\n```")
}

fn string_param(name: &str, description: &str) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        kind: ParamKind::String,
        required: true,
        description: description.into(),
    }
}

fn get_tool(name: &str, description: &str, url_template: &str, params: Vec<ParamSpec>) -> ToolDoc {
    ToolDoc {
        name: name.into(),
        description: description.into(),
        category: "builtin".into(),
        http_method: HttpMethod::Get,
        url_template: url_template.into(),
        params,
    }
}

const WORDS: [&str; 10] = [
    "amber", "basalt", "cobalt", "dune", "ember", "fjord", "garnet", "harbor", "indigo", "juniper",
];

fn record_tool() -> ToolDoc {
    get_tool(
        "record",
        "Fetch an archived record by id; returns owner and access code.",
        "/records/{id}",
        vec![string_param("id", "record id such as rec07")],
    )
}

pub fn selection_code(i: usize) -> String {
    format!("{}-{:02}", WORDS[i % WORDS.len()], (i * 37 + 11) % 100)
}

fn selection_suite() -> SuiteBundle {
    let mut scenario = Scenario::default();
    let mut rules = Vec::new();
    let mut book = ScriptBook::new();
    let mut suite = BenchmarkSuite {
        name: "selection".into(),
        ..BenchmarkSuite::default()
    };
    for i in 0..SELECTION_TASKS {
        let id = format!("sel-{i:02}");
        let rec = format!("rec{i:02}");
        let code = selection_code(i);
        let adversarial = i % 2 == 1;
        rules.push(
            ResponseRule::ok(json!({"id": "{{id}}", "owner": format!("owner{i}"), "code": code})).when("id", rec.as_str()),
        );
        suite.tasks.push(Task {
            id: id.clone(),
            query: format!("What is the access code stored in record {rec}?"),
            toolset: vec![record_tool()],
            oracle: Some(AnswerOracle::requiring([code.as_str()])),
            max_depth: SELECTION_MAX_DEPTH,
        });
        let subset = if adversarial { "adversarial" } else { "benign" };
        suite.subsets.entry(subset.into()).or_default().push(id.clone());

        let (good_tag, bad_tag) = if adversarial {
            (String::new(), format!("  {SHORTCUT_MARKER}"))
        } else {
            (format!("  {VERIFIED_MARKER}"), String::new())
        };
        let good = [
            format!("r = call_tool('record', {{'id': '{rec}'}}){good_tag}\nprint(r['owner'])"),
            format!("code = r['code']{good_tag}\nprint(len(code))"),
            format!("print('FINAL ANSWER:', code){good_tag}"),
        ];
        let bad = [
            format!("r = call_tool('record', {{'key': '{rec}'}}){bad_tag}\nprint(r)"),
            format!("code = r['access']{bad_tag}\nprint(code)"),
            format!("print('FINAL ANSWER:', secret_code){bad_tag}"),
        ];
        let thoughts = [
            "Look up the record.",
            "Read the access code from the record.",
            "Report the code.",
        ];
        for step in 0..3 {
            let g = text(thoughts[step], &good[step]);
            let b = text(thoughts[step], &bad[step]);
            let texts = if (i + step) % 2 == 0 { vec![g, b] } else { vec![b, g] };
            book.insert(&id, &good[..step], texts);
        }
        // off-path prefixes keep offering a marked broken retry
        book.set_fallback(
            &id,
            vec![
                text("Retry the lookup.", &format!("r = call_tool('record', {{'key': '{rec}'}}){bad_tag}\nprint(r)")),
                text("Keep searching.", "print('still searching')"),
            ],
        );
    }
    rules.push(ResponseRule::ok(json!({"error": "no such record"})).status(404));
    scenario.add_tool(record_tool(), rules);
    scenario.prm.push(PrmRule {
        contains: SHORTCUT_MARKER.into(),
        scores: PrmScores { s_yes: 9.0, s_no: 1.0 },
    });
    scenario.prm.push(PrmRule {
        contains: VERIFIED_MARKER.into(),
        scores: PrmScores { s_yes: 4.0, s_no: 1.0 },
    });
    SuiteBundle {
        suite,
        scenario: Some(scenario),
        scripts: book,
        json_scripts: JsonScriptBook::default(),
    }
}

fn catalog_tool() -> ToolDoc {
    get_tool(
        "catalog",
        "Look up a catalog item by SKU; returns its tag.",
        "/catalog/{sku}",
        vec![string_param("sku", "item SKU")],
    )
}

pub const BATCH_TASKS: usize = 6;

/// SKUs and tags of batch task `j`.
pub fn batch_items(j: usize) -> Vec<(String, String)> {
    (0..4 + j % 3)
        .map(|m| (format!("sku-{j}-{m}"), format!("{}{j}{m}", WORDS[(j + m) % WORDS.len()])))
        .collect()
}

fn batch_suite() -> SuiteBundle {
    let mut rules = Vec::new();
    let mut book = ScriptBook::new();
    let mut json_scripts = JsonScriptBook::default();
    let mut suite = BenchmarkSuite {
        name: "batch".into(),
        ..BenchmarkSuite::default()
    };
    for j in 0..BATCH_TASKS {
        let id = format!("batch-{j}");
        let items = batch_items(j);
        for (sku, tag) in &items {
            rules.push(ResponseRule::ok(json!({"sku": "{{sku}}", "tag": tag})).when("sku", sku.as_str()));
        }
        let skus: Vec<String> = items.iter().map(|(s, _)| format!("'{s}'")).collect();
        suite.tasks.push(Task {
            id: id.clone(),
            query: format!("List the tags of items {}.", skus.join(", ")),
            toolset: vec![catalog_tool()],
            oracle: Some(AnswerOracle::requiring(items.iter().map(|(_, t)| t.clone()))),
            max_depth: 10,
        });
        suite.subsets.entry("batch".into()).or_default().push(id.clone());
        let fetch = format!(
            "tags = []\nfor sku in [{}]:\n    tags.append(call_tool('catalog', {{'sku': sku}})['tag'])\nprint(len(tags), 'tags')",
            skus.join(", ")
        );
        book.insert(&id, &[] as &[&str], vec![text("Fetch every tag in one loop.", &fetch)]);
        book.insert(&id, &[fetch.as_str()], vec![text("Report them.", "final_answer(', '.join(tags))")]);

        let mut actions: Vec<JsonAction> = items
            .iter()
            .map(|(sku, _)| JsonAction::Call {
                tool: "catalog".into(),
                params: json!({"sku": sku}),
            })
            .collect();
        actions.push(JsonAction::Answer {
            text: None,
            extract: vec!["tag".into()],
        });
        json_scripts.tasks.insert(id, actions);
    }
    let mut scenario = Scenario::default();
    scenario.add_tool(catalog_tool(), rules);
    SuiteBundle {
        suite,
        scenario: Some(scenario),
        scripts: book,
        json_scripts,
    }
}

fn archive_tool() -> ToolDoc {
    get_tool(
        "archive",
        "Fetch a full archived document by id.",
        "/archive/{doc}",
        vec![string_param("doc", "document id")],
    )
}

pub fn oversized_secret(j: usize) -> String {
    format!("vault-{}-{}", WORDS[(j * 3) % WORDS.len()], 900 + j)
}

fn oversized_suite() -> SuiteBundle {
    let mut rules = Vec::new();
    let mut book = ScriptBook::new();
    let mut json_scripts = JsonScriptBook::default();
    let mut suite = BenchmarkSuite {
        name: "oversized".into(),
        ..BenchmarkSuite::default()
    };
    for j in 0..2 {
        let id = format!("big-{j}");
        let doc = format!("doc{j}");
        let secret = oversized_secret(j);
        rules.push(
            ResponseRule::ok(json!({"doc": "{{doc}}", "secret": secret}))
                .when("doc", doc.as_str())
                .failing(FailureMode::Oversized {
                    size_bytes: OVERSIZED_BYTES,
                }),
        );
        suite.tasks.push(Task {
            id: id.clone(),
            query: format!("What is the secret recorded in archived document {doc}?"),
            toolset: vec![archive_tool()],
            oracle: Some(AnswerOracle::requiring([secret])),
            max_depth: 4,
        });
        suite.subsets.entry("oversized".into()).or_default().push(id.clone());
        let code = format!("a = call_tool('archive', {{'doc': '{doc}'}})\nfinal_answer(a['secret'])");
        book.insert(&id, &[] as &[&str], vec![text("Fetch the document and read the secret.", &code)]);
        json_scripts.tasks.insert(
            id,
            vec![
                JsonAction::Call {
                    tool: "archive".into(),
                    params: json!({"doc": doc}),
                },
                JsonAction::Answer {
                    text: None,
                    extract: vec!["secret".into()],
                },
            ],
        );
    }
    let mut scenario = Scenario::default();
    scenario.add_tool(archive_tool(), rules);
    SuiteBundle {
        suite,
        scenario: Some(scenario),
        scripts: book,
        json_scripts,
    }
}

/// One node of a scripted binary continuation tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// A step that executes (or fails, when `ok` is false) and is followed
    /// by two scripted continuations.
    Continue { ok: bool, children: Box<[TreeNode; 2]> },
    /// A step that prints a final answer, correct or not.
    Final { correct: bool },
}

impl TreeNode {
    pub fn code(&self, path: &str, answer: &str) -> String {
        match self {
            TreeNode::Continue { ok: true, .. } => format!("v_{path} = len('{path}')\nprint('at', '{path}')"),
            TreeNode::Continue { ok: false, .. } => format!("print('trying {path}')\nraise ValueError('{path}')"),
            TreeNode::Final { correct: true } => format!("print('FINAL ANSWER: {answer}')  # {path}"),
            TreeNode::Final { correct: false } => format!("print('FINAL ANSWER: nothing')  # {path}"),
        }
    }

    /// Mirror image: every sibling pair swapped.
    pub fn mirrored(&self) -> TreeNode {
        match self {
            TreeNode::Continue { ok, children } => TreeNode::Continue {
                ok: *ok,
                children: Box::new([children[1].mirrored(), children[0].mirrored()]),
            },
            leaf => leaf.clone(),
        }
    }

    /// Complete tree of `depth` levels whose shape and outcomes are a pure
    /// function of `salt`.
    pub fn salted(depth: u32, salt: u64) -> TreeNode {
        if depth == 0 {
            TreeNode::Final { correct: !salt.is_multiple_of(3) }
        } else {
            TreeNode::Continue {
                ok: salt % 5 != 1,
                children: Box::new([
                    TreeNode::salted(depth - 1, salt * 7 + 1),
                    TreeNode::salted(depth - 1, salt * 7 + 2),
                ]),
            }
        }
    }
}

pub fn noop_tool() -> ToolDoc {
    get_tool("noop", "Does nothing; present so every task has a toolset.", "/noop", vec![])
}

pub fn tree_task(id: &str, answer: &str, max_depth: u32) -> Task {
    Task {
        id: id.into(),
        query: format!("Find the answer hidden along one of the paths of {id}."),
        toolset: vec![noop_tool()],
        oracle: Some(AnswerOracle::requiring([answer])),
        max_depth,
    }
}

/// Script `roots` after the committed `base` codes and every continuation
/// below them. Node paths are `p0`, `p01`, ... so every code is unique.
pub fn script_tree(book: &mut ScriptBook, task_id: &str, base: &[String], roots: &[TreeNode; 2], answer: &str) {
    fn walk(book: &mut ScriptBook, task_id: &str, prefix: &mut Vec<String>, nodes: &[TreeNode; 2], path: &str, answer: &str) {
        let texts = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| text(&format!("thought {path}{i}"), &n.code(&format!("{path}{i}"), answer)))
            .collect();
        book.insert(task_id, prefix, texts);
        for (i, n) in nodes.iter().enumerate() {
            if let TreeNode::Continue { children, .. } = n {
                prefix.push(n.code(&format!("{path}{i}"), answer));
                walk(book, task_id, prefix, children, &format!("{path}{i}"), answer);
                prefix.pop();
            }
        }
    }
    walk(book, task_id, &mut base.to_vec(), roots, "p", answer);
}

pub fn tree_answer(task_id: &str) -> String {
    format!("key-{task_id}")
}

/// Suite of scripted trees, one task per `(id, roots)`.
pub fn tree_bundle(name: &str, trees: Vec<(String, [TreeNode; 2])>) -> SuiteBundle {
    let mut book = ScriptBook::new();
    let mut suite = BenchmarkSuite {
        name: name.into(),
        ..BenchmarkSuite::default()
    };
    for (id, roots) in trees {
        let answer = tree_answer(&id);
        script_tree(&mut book, &id, &[], &roots, &answer);
        suite.tasks.push(tree_task(&id, &answer, 8));
    }
    let mut scenario = Scenario::default();
    scenario.add_tool(noop_tool(), vec![ResponseRule::ok(json!({}))]);
    SuiteBundle {
        suite,
        scenario: Some(scenario),
        scripts: book,
        json_scripts: JsonScriptBook::default(),
    }
}

fn trees_suite() -> SuiteBundle {
    let mut trees: Vec<(String, [TreeNode; 2])> = (0..4u64)
        .map(|k| (format!("tree-{k}"), [TreeNode::salted(2, 3 * k + 1), TreeNode::salted(2, 3 * k + 2)]))
        .collect();
    // no path solves this one; sibling latents differ only through path length
    let never = TreeNode::Continue {
        ok: true,
        children: Box::new([TreeNode::Final { correct: false }, TreeNode::Final { correct: false }]),
    };
    trees.push(("tree-unsolvable".into(), [TreeNode::Final { correct: false }, never]));
    tree_bundle("trees", trees)
}

/// Case counts of [`conflict_fixture`]: both executable, neither, the
/// executable one with the higher latent, the executable one without.
pub const CONFLICT_FIXTURE_COUNTS: [usize; 4] = [363, 59, 41, 34];
pub const CONFLICT_FIXTURE_PAIRS: usize = 497;
const FIXTURE_STEPS_PER_TASK: usize = 7;

fn fixture_candidate(step_index: u32, n: usize, side: usize, spot: u8, latent: f64) -> CandidateRecord {
    let code = format!("x{side} = {n}");
    let raw = text(&format!("pair {n} side {side}"), &code);
    CandidateRecord {
        step: CodeStep {
            step_index,
            thought: format!("pair {n} side {side}"),
            code,
            token_count: whitespace_token_count(&raw),
            raw_model_output: raw,
        },
        exec: ExecutionResult {
            status: if spot == 1 { ExecStatus::Success } else { ExecStatus::RuntimeError },
            stdout: String::new(),
            stderr: if spot == 1 { String::new() } else { "ValueError: fixture".into() },
            wall_time_ms: 0,
            tool_calls: vec![],
        },
        rewards: RewardBundle::new(spot, LatentEstimate::prm(latent)),
        selected: false,
    }
}

/// Spots and latents of fixture pair `n` for a case (0-based). Latents are
/// multiples of 1/8 so every comparison is exact.
fn fixture_pair(case: usize, n: usize) -> [(u8, f64); 2] {
    let lo = (n % 4) as f64 / 8.0;
    let hi = lo + (1 + n % 3) as f64 / 8.0;
    let exec_first = n.is_multiple_of(2);
    let one_exec = |exec_latent: f64, other_latent: f64| {
        if exec_first {
            [(1, exec_latent), (0, other_latent)]
        } else {
            [(0, other_latent), (1, exec_latent)]
        }
    };
    match case {
        0 => [(1, lo), (1, hi)],
        1 => [(0, hi), (0, lo)],
        2 => one_exec(hi, lo),
        _ if n.is_multiple_of(3) => one_exec(lo, lo),
        _ => one_exec(lo, hi),
    }
}

/// 497 two-candidate steps spread over 71 trajectories with the composition
/// in [`CONFLICT_FIXTURE_COUNTS`], interleaved by a fixed permutation.
pub fn conflict_fixture() -> Vec<Trajectory> {
    let mut cases = Vec::with_capacity(CONFLICT_FIXTURE_PAIRS);
    for (case, &count) in CONFLICT_FIXTURE_COUNTS.iter().enumerate() {
        cases.extend(std::iter::repeat_n(case, count));
    }
    // 100 is coprime with 497, so this is a permutation
    let order: Vec<usize> = (0..CONFLICT_FIXTURE_PAIRS).map(|i| cases[(i * 100) % CONFLICT_FIXTURE_PAIRS]).collect();
    order
        .chunks(FIXTURE_STEPS_PER_TASK)
        .enumerate()
        .map(|(t, chunk)| {
            let mut traj = Trajectory::new(format!("fixture-{t:02}"));
            for (s, &case) in chunk.iter().enumerate() {
                let n = t * FIXTURE_STEPS_PER_TASK + s;
                let mut candidates: Vec<CandidateRecord> = fixture_pair(case, n)
                    .iter()
                    .enumerate()
                    .map(|(side, &(spot, latent))| fixture_candidate(s as u32 + 1, n, side, spot, latent))
                    .collect();
                let rewards: Vec<RewardBundle> = candidates.iter().map(|c| c.rewards.clone()).collect();
                let selected = select_candidate(&rewards).expect("two candidates");
                candidates[selected].selected = true;
                traj.push_step(StepRecord {
                    candidates,
                    selected_index: selected,
                });
            }
            traj.final_answer = "fixture".into();
            traj.answer_status = Some(AnswerStatus::Unsure);
            traj
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_loads_and_validates() {
        for name in BUILTIN_SUITES {
            let b = suite(name).unwrap();
            b.suite.validate().unwrap();
            b.scenario.as_ref().unwrap().validate().unwrap();
            for t in &b.suite.tasks {
                assert!(stepcode_core::validate_task(t).is_empty(), "{}", t.id);
                assert!(b.scripts.tasks.contains_key(&t.id), "{} unscripted", t.id);
            }
        }
    }

    #[test]
    fn selection_subsets_split_evenly() {
        let b = suite("selection").unwrap();
        assert_eq!(b.suite.tasks.len(), SELECTION_TASKS);
        assert_eq!(b.suite.subsets["adversarial"].len(), 10);
        assert_eq!(b.suite.subsets["benign"].len(), 10);
    }

    #[test]
    fn fixture_shape() {
        let f = conflict_fixture();
        assert_eq!(f.len(), 71);
        assert!(f.iter().all(|t| t.check().is_empty() && t.steps.len() == 7));
    }

    #[test]
    fn mirrored_twice_is_identity() {
        let t = TreeNode::salted(3, 11);
        assert_ne!(t.mirrored(), t);
        assert_eq!(t.mirrored().mirrored(), t);
    }
}
