//! Process-data collection: a depth-first binary action tree with rollout
//! latents on every node, sibling labelling and preference-pair export.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::{derive_seed, to_canonical_string};
use stepcode_core::{CodeStep, ExecutionResult, HyperParams, LatentEstimate, Task};

use crate::answer::has_sentinel;
use crate::error::EngineError;
use crate::policy::sample_candidates;
use crate::prompt::{assemble_prompt, HistoryEntry};
use crate::rollout::{depth_limit, estimate_latent_by_rollout, RolloutConfig};
use crate::runtime::{advance, history_entry, Runtime, Session};

/// Samples drawn per expanded node.
pub const TREE_BRANCHING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialLabel {
    MorePotential,
    LessPotential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTreeNode {
    pub node_id: usize,
    pub parent: Option<usize>,
    /// Step index; the root is depth 0 and carries no step.
    pub depth: u32,
    pub step: Option<CodeStep>,
    pub exec: Option<ExecutionResult>,
    pub children: Vec<usize>,
    pub latent: Option<LatentEstimate>,
    pub label: Option<PotentialLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTree {
    pub task_id: String,
    pub query: String,
    pub nodes: Vec<ProcessTreeNode>,
}

impl ProcessTree {
    pub fn new(task: &Task) -> Self {
        Self {
            task_id: task.id.clone(),
            query: task.query.clone(),
            nodes: vec![ProcessTreeNode {
                node_id: 0,
                parent: None,
                depth: 0,
                step: None,
                exec: None,
                children: Vec::new(),
                latent: None,
                label: None,
            }],
        }
    }

    /// Non-root node count.
    pub fn step_nodes(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Steps from the root down to and including `node`.
    pub fn path_to(&self, node: usize) -> Vec<HistoryEntry> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(id) = cur {
            let n = &self.nodes[id];
            if let (Some(step), Some(exec)) = (&n.step, &n.exec) {
                out.push(history_entry(step, exec));
            }
            cur = n.parent;
        }
        out.reverse();
        out
    }

    /// Label every sibling pair whose latents differ.
    pub fn assign_labels(&mut self) {
        for id in 0..self.nodes.len() {
            let children = self.nodes[id].children.clone();
            for &c in &children {
                self.nodes[c].label = None;
            }
            if let [a, b] = children[..] {
                if let (Some(la), Some(lb)) = (&self.nodes[a].latent, &self.nodes[b].latent) {
                    let (hi, lo) = match la.value.partial_cmp(&lb.value) {
                        Some(std::cmp::Ordering::Greater) => (a, b),
                        Some(std::cmp::Ordering::Less) => (b, a),
                        _ => continue,
                    };
                    self.nodes[hi].label = Some(PotentialLabel::MorePotential);
                    self.nodes[lo].label = Some(PotentialLabel::LessPotential);
                }
            }
        }
    }
}

/// One preference pair for process reward model training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmPair {
    pub task_id: String,
    pub query: String,
    pub prefix: Vec<HistoryEntry>,
    pub chosen: String,
    pub rejected: String,
    pub chosen_latent: f64,
    pub rejected_latent: f64,
}

struct Expansion<'a, 'g> {
    task: &'a Task,
    rt: &'a Runtime<'g>,
    hp: &'a HyperParams,
    cfg: &'a RolloutConfig,
    depth_cap: usize,
}

impl Expansion<'_, '_> {
    fn expand(&self, tree: &mut ProcessTree, node: usize, session: &Session<'_>, history: &[HistoryEntry]) -> Result<(), EngineError> {
        let depth = history.len();
        let terminal = depth >= depth_limit(self.task, self.hp)
            || history.last().is_some_and(|h| has_sentinel(&h.stdout, self.rt.sentinel));
        if depth >= self.depth_cap || terminal {
            return Ok(());
        }
        let prompt = assemble_prompt(self.task, history, self.rt.sentinel);
        let seed = derive_seed(self.hp.rng_seed, &[&self.task.id, "tree", &prompt.prefix_hash()]);
        let steps = sample_candidates(self.rt.backend, &prompt, TREE_BRANCHING, self.cfg.temperature, seed)?;

        let mut expanded = Vec::with_capacity(steps.len());
        for step in steps {
            let (child, exec) = advance(session, &step, self.hp.exec_timeout_ms)?;
            let mut child_history = history.to_vec();
            child_history.push(history_entry(&step, &exec));
            let latent = estimate_latent_by_rollout(self.task, &child, &child_history, self.rt, self.hp, self.cfg)?;
            let id = tree.nodes.len();
            tree.nodes.push(ProcessTreeNode {
                node_id: id,
                parent: Some(node),
                depth: depth as u32 + 1,
                step: Some(step),
                exec: Some(exec),
                children: Vec::new(),
                latent: Some(latent),
                label: None,
            });
            tree.nodes[node].children.push(id);
            expanded.push((id, child, child_history));
        }
        for (id, child, child_history) in expanded {
            self.expand(tree, id, &child, &child_history)?;
        }
        Ok(())
    }
}

/// Depth-first expansion with two samples per node up to `depth_cap`
/// steps; every node gets a rollout latent and siblings are labelled.
pub fn collect_tree(
    task: &Task,
    rt: &Runtime<'_>,
    hp: &HyperParams,
    cfg: &RolloutConfig,
    depth_cap: usize,
) -> Result<ProcessTree, EngineError> {
    let mut tree = ProcessTree::new(task);
    let root = Session::open(rt.gateway, task)?;
    let exp = Expansion {
        task,
        rt,
        hp,
        cfg,
        depth_cap,
    };
    exp.expand(&mut tree, 0, &root, &[])?;
    tree.assign_labels();
    Ok(tree)
}

/// One pair per expanded node whose two children have unequal latents,
/// the higher one chosen.
pub fn label_pairs(tree: &ProcessTree) -> Vec<PrmPair> {
    let mut pairs = Vec::new();
    for node in &tree.nodes {
        let [a, b] = node.children[..] else { continue };
        let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
        let (Some(la), Some(lb)) = (&na.latent, &nb.latent) else { continue };
        let (hi, lo) = if la.value > lb.value {
            (na, nb)
        } else if lb.value > la.value {
            (nb, na)
        } else {
            continue;
        };
        let text = |n: &ProcessTreeNode| n.step.as_ref().map(|s| s.raw_model_output.clone()).unwrap_or_default();
        pairs.push(PrmPair {
            task_id: tree.task_id.clone(),
            query: tree.query.clone(),
            prefix: tree.path_to(node.node_id),
            chosen: text(hi),
            rejected: text(lo),
            chosen_latent: hi.latent.as_ref().map_or(0.0, |l| l.value),
            rejected_latent: lo.latent.as_ref().map_or(0.0, |l| l.value),
        });
    }
    pairs
}

pub fn write_jsonl<W: Write>(pairs: &[PrmPair], mut out: W) -> Result<usize, EngineError> {
    for p in pairs {
        out.write_all(to_canonical_string(p)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(pairs.len())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PrmPair>, EngineError> {
    let mut pairs = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line)
            .map_err(|e| EngineError::Core(stepcode_core::CoreError::Malformed(format!("line {}: {e}", n + 1))))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Write one key-sorted JSON object per line; returns the count written.
pub fn emit_jsonl(pairs: &[PrmPair], path: &Path) -> Result<usize, EngineError> {
    write_jsonl(pairs, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<PrmPair>, EngineError> {
    read_jsonl(BufReader::new(std::fs::File::open(path)?))
}
