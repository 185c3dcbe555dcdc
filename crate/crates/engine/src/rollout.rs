//! Monte Carlo latent estimation: continue from a step to termination
//! several times, judge each final answer, and turn the solved fraction
//! and the mean continuation length into a latent reward.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stepcode_core::canonical::derive_seed;
use stepcode_core::judge::judge_answer;
use stepcode_core::reward::{latent_from_rollouts, raw_latent};
use stepcode_core::{par, AnswerStatus, HyperParams, LatentEstimate, LatentMethod, RolloutStats, Task};

use crate::answer::{compose_final_answer, has_sentinel};
use crate::error::EngineError;
use crate::policy::sample_candidates;
use crate::prompt::{assemble_prompt, HistoryEntry};
use crate::runtime::{advance, history_entry, Runtime, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// `n_rollouts` continuations, each picking one of `branching` samples
    /// uniformly at random per step.
    #[default]
    Sampled,
    /// Every path of the continuation tree with `branching` children per
    /// step; `n_rollouts` is ignored and the leaf count is the total.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub mode: RolloutMode,
    pub branching: usize,
    pub temperature: f64,
    pub parallel: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            mode: RolloutMode::Sampled,
            branching: 2,
            temperature: 1.0,
            parallel: true,
        }
    }
}

impl RolloutConfig {
    pub fn exhaustive() -> Self {
        Self {
            mode: RolloutMode::Exhaustive,
            ..Self::default()
        }
    }
}

/// How one continuation ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub solved: bool,
    /// Steps taken after the evaluated step.
    pub steps: u32,
    pub status: Option<AnswerStatus>,
    pub error: Option<String>,
}

/// Deepest step a continuation may reach.
pub fn depth_limit(task: &Task, hp: &HyperParams) -> usize {
    task.max_depth.min(hp.max_depth) as usize
}

fn is_terminal(history: &[HistoryEntry], limit: usize, sentinel: &str) -> bool {
    history.len() >= limit || history.last().is_some_and(|h| has_sentinel(&h.stdout, sentinel))
}

fn finish(task: &Task, history: &[HistoryEntry], steps: u32, rt: &Runtime<'_>) -> RolloutOutcome {
    let (answer, _) = compose_final_answer(task, history, rt.composer, rt.sentinel);
    match judge_answer(rt.judge, task, &answer) {
        Ok(status) => RolloutOutcome {
            solved: status == AnswerStatus::Solved,
            steps,
            status: Some(status),
            error: None,
        },
        Err(e) => RolloutOutcome {
            solved: false,
            steps,
            status: None,
            error: Some(e.to_string()),
        },
    }
}

fn enumerate(
    task: &Task,
    session: &Session<'_>,
    history: &[HistoryEntry],
    steps: u32,
    rt: &Runtime<'_>,
    hp: &HyperParams,
    cfg: &RolloutConfig,
) -> Result<Vec<RolloutOutcome>, EngineError> {
    if is_terminal(history, depth_limit(task, hp), rt.sentinel) {
        return Ok(vec![finish(task, history, steps, rt)]);
    }
    let prompt = assemble_prompt(task, history, rt.sentinel);
    let seed = derive_seed(hp.rng_seed, &[&task.id, "enumerate", &prompt.prefix_hash()]);
    let cands = sample_candidates(rt.backend, &prompt, cfg.branching, cfg.temperature, seed)?;
    let branches = par::map(&cands, cfg.parallel, |step| {
        let (child, exec) = advance(session, step, hp.exec_timeout_ms)?;
        let mut next = history.to_vec();
        next.push(history_entry(step, &exec));
        enumerate(task, &child, &next, steps + 1, rt, hp, cfg)
    });
    let mut out = Vec::new();
    for b in branches {
        out.extend(b?);
    }
    Ok(out)
}

fn sampled_rollout(
    task: &Task,
    session: &Session<'_>,
    history: &[HistoryEntry],
    seed: u64,
    rt: &Runtime<'_>,
    hp: &HyperParams,
    cfg: &RolloutConfig,
) -> Result<RolloutOutcome, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = session.fork()?;
    let mut hist = history.to_vec();
    let mut steps = 0;
    let limit = depth_limit(task, hp);
    while !is_terminal(&hist, limit, rt.sentinel) {
        let prompt = assemble_prompt(task, &hist, rt.sentinel);
        let cands = sample_candidates(rt.backend, &prompt, cfg.branching, cfg.temperature, rng.next_u64())?;
        let pick = &cands[rng.random_range(0..cands.len())];
        let exec = state.run_and_commit(pick, hp.exec_timeout_ms)?;
        hist.push(history_entry(pick, &exec));
        steps += 1;
    }
    Ok(finish(task, &hist, steps, rt))
}

/// Run continuations from the state after a step.
///
/// `history` ends with the evaluated step and `session` holds the state it
/// produced. Sampled continuations that fail count as not solved;
/// environmental failures and any failure in exhaustive mode propagate.
pub fn rollout_outcomes(
    task: &Task,
    session: &Session<'_>,
    history: &[HistoryEntry],
    rt: &Runtime<'_>,
    hp: &HyperParams,
    cfg: &RolloutConfig,
) -> Result<Vec<RolloutOutcome>, EngineError> {
    match cfg.mode {
        RolloutMode::Exhaustive => enumerate(task, session, history, 0, rt, hp, cfg),
        RolloutMode::Sampled => {
            if hp.n_rollouts == 0 {
                return Err(EngineError::Config("n_rollouts must be at least 1".into()));
            }
            let prefix = stepcode_core::canonical::prefix_hash(
                &history.iter().map(|h| h.code.as_str()).collect::<Vec<_>>(),
            );
            let results = par::map_range(hp.n_rollouts, cfg.parallel, |i| {
                let seed = derive_seed(hp.rng_seed, &[&task.id, "rollout", &prefix, &i.to_string()]);
                sampled_rollout(task, session, history, seed, rt, hp, cfg)
            });
            let mut out = Vec::with_capacity(results.len());
            for r in results {
                match r {
                    Ok(o) => out.push(o),
                    Err(e) if e.is_environmental() => return Err(e),
                    Err(e) => {
                        tracing::warn!(task = %task.id, error = %e, "rollout failed");
                        out.push(RolloutOutcome {
                            solved: false,
                            steps: 0,
                            status: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Latent estimate from continuation outcomes.
pub fn latent_from_outcomes(outcomes: &[RolloutOutcome], hp: &HyperParams) -> Result<LatentEstimate, EngineError> {
    let delta_total = outcomes.len() as u32;
    let delta_correct = outcomes.iter().filter(|o| o.solved).count() as u32;
    let raw_lr = raw_latent(delta_correct, delta_total)?;
    let steps: u64 = outcomes.iter().map(|o| u64::from(o.steps)).sum();
    let tau = steps as f64 / f64::from(delta_total);
    let value = latent_from_rollouts(raw_lr, tau, hp)?;
    Ok(LatentEstimate {
        value,
        method: LatentMethod::Rollout,
        rollout_stats: Some(RolloutStats {
            delta_correct,
            delta_total,
            tau,
            raw_lr,
        }),
    })
}

pub fn estimate_latent_by_rollout(
    task: &Task,
    session: &Session<'_>,
    history: &[HistoryEntry],
    rt: &Runtime<'_>,
    hp: &HyperParams,
    cfg: &RolloutConfig,
) -> Result<LatentEstimate, EngineError> {
    let outcomes = rollout_outcomes(task, session, history, rt, hp, cfg)?;
    latent_from_outcomes(&outcomes, hp)
}
