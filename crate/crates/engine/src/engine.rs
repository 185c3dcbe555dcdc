//! The stepwise inference loop: sample candidates, execute each on a fork
//! of the committed state, score, commit the best one, repeat.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stepcode_core::canonical::derive_seed;
use stepcode_core::judge::judge_answer;
use stepcode_core::reward::{on_the_spot, select_candidate};
use stepcode_core::{
    par, validate_task, AnswerStatus, CandidateRecord, ExecutionResult, HyperParams, LatentEstimate,
    RewardBundle, StepRecord, Task, Trajectory,
};

use crate::answer::{compose_final_answer, has_sentinel};
use crate::error::EngineError;
use crate::policy::sample_candidates;
use crate::prompt::{assemble_prompt, HistoryEntry, DEFAULT_SENTINEL};
use crate::rollout::{depth_limit, RolloutConfig};
use crate::runtime::{advance, history_entry, Runtime, Session};
use crate::scorer::{LatentScorer, ScoreRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    Prm,
    #[default]
    Rollout,
    ConstantZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub hp: HyperParams,
    pub latent_mode: LatentMode,
    pub spot_enabled: bool,
    pub latent_enabled: bool,
    pub sentinel: String,
    /// Sampling temperature for step candidates.
    pub temperature: f64,
    /// Execute and score a step's candidates concurrently.
    pub parallel: bool,
    pub rollout: RolloutConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            latent_mode: LatentMode::default(),
            spot_enabled: true,
            latent_enabled: true,
            sentinel: DEFAULT_SENTINEL.to_string(),
            temperature: 0.7,
            parallel: true,
            rollout: RolloutConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.hp.validate()?;
        if self.sentinel.trim().is_empty() {
            return Err(EngineError::Config("sentinel must not be empty".into()));
        }
        if self.rollout.branching == 0 {
            return Err(EngineError::Config("rollout branching must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rewards after the ablation switches, plus a forced pick when the latent
/// reward is off.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablated {
    pub rewards: Vec<RewardBundle>,
    pub pick: Option<usize>,
}

/// Zero the disabled reward terms. With the latent term off and at least
/// one executable candidate, one executable candidate is picked uniformly
/// at random from `seed`.
pub fn apply_ablation(cfg: &EngineConfig, rewards: &[RewardBundle], executable: &[bool], seed: u64) -> Ablated {
    let rewards = rewards
        .iter()
        .map(|r| {
            let spot = if cfg.spot_enabled { r.r_spot } else { 0 };
            let latent = if cfg.latent_enabled {
                r.latent.clone()
            } else {
                LatentEstimate::constant(0.0)
            };
            RewardBundle::new(spot, latent)
        })
        .collect();
    let pick = if cfg.latent_enabled {
        None
    } else {
        let ok: Vec<usize> = (0..executable.len()).filter(|&i| executable[i]).collect();
        match ok.len() {
            0 => None,
            1 => Some(ok[0]),
            n => Some(ok[ChaCha8Rng::seed_from_u64(seed).random_range(0..n)]),
        }
    };
    Ablated { rewards, pick }
}

struct Evaluated<'g> {
    session: Session<'g>,
    exec: ExecutionResult,
    latent: LatentEstimate,
}

/// Run one task to termination.
pub fn run_task(
    task: &Task,
    cfg: &EngineConfig,
    rt: &Runtime<'_>,
    scorer: &dyn LatentScorer,
) -> Result<Trajectory, EngineError> {
    let mut traj = Trajectory::new(&task.id);
    run_into(&mut traj, task, cfg, rt, scorer)?;
    Ok(traj)
}

/// Like [`run_task`], but a failure is recorded on the trajectory (which
/// keeps every step committed so far) and the answer judged Unsolved.
pub fn run_task_recorded(
    task: &Task,
    cfg: &EngineConfig,
    rt: &Runtime<'_>,
    scorer: &dyn LatentScorer,
) -> (Trajectory, Option<EngineError>) {
    let mut traj = Trajectory::new(&task.id);
    match run_into(&mut traj, task, cfg, rt, scorer) {
        Ok(()) => (traj, None),
        Err(e) => {
            traj.error = Some(e.to_string());
            traj.answer_status = Some(AnswerStatus::Unsolved);
            (traj, Some(e))
        }
    }
}

fn run_into(
    traj: &mut Trajectory,
    task: &Task,
    cfg: &EngineConfig,
    rt: &Runtime<'_>,
    scorer: &dyn LatentScorer,
) -> Result<(), EngineError> {
    let violations = validate_task(task);
    if !violations.is_empty() {
        return Err(EngineError::InvalidTask {
            task: task.id.clone(),
            violations: violations.join("; "),
        });
    }
    cfg.validate()?;
    let rt = rt.with_sentinel(&cfg.sentinel);
    let hp = &cfg.hp;
    let mut parent = Session::open(rt.gateway, task)?;
    let mut history: Vec<HistoryEntry> = Vec::new();

    for _ in 0..depth_limit(task, hp) {
        let t = history.len() + 1;
        let prompt = assemble_prompt(task, &history, rt.sentinel);
        let prefix = prompt.prefix_hash();
        let seed = derive_seed(hp.rng_seed, &[&task.id, "step", &prefix]);
        let steps = sample_candidates(rt.backend, &prompt, hp.n_candidates, cfg.temperature, seed)?;

        let results = par::map(&steps, cfg.parallel, |step| -> Result<Evaluated<'_>, EngineError> {
            let (session, exec) = advance(&parent, step, hp.exec_timeout_ms)?;
            let latent = if cfg.latent_enabled {
                scorer.score(&ScoreRequest {
                    task,
                    prefix: &history,
                    candidate: step,
                    exec: &exec,
                    state: &session,
                })?
            } else {
                LatentEstimate::constant(0.0)
            };
            Ok(Evaluated { session, exec, latent })
        });
        let mut evaluated = Vec::with_capacity(results.len());
        for r in results {
            evaluated.push(r?);
        }

        let raw: Vec<RewardBundle> = evaluated
            .iter()
            .map(|e| RewardBundle::new(on_the_spot(&e.exec), e.latent.clone()))
            .collect();
        let executable: Vec<bool> = evaluated.iter().map(|e| e.exec.is_success()).collect();
        let ablation_seed = derive_seed(hp.rng_seed, &[&task.id, "ablation", &prefix]);
        let ablated = apply_ablation(cfg, &raw, &executable, ablation_seed);
        let selected = match ablated.pick {
            Some(i) => i,
            None => select_candidate(&ablated.rewards)?,
        };

        let mut winner = None;
        let mut candidates = Vec::with_capacity(steps.len());
        for (i, ((step, ev), rewards)) in steps.into_iter().zip(evaluated).zip(ablated.rewards).enumerate() {
            if i == selected {
                winner = Some(ev.session);
            }
            candidates.push(CandidateRecord {
                step,
                exec: ev.exec,
                rewards,
                selected: i == selected,
            });
        }
        // the winner's fork already holds the committed state
        parent = winner.expect("selected index within candidates");
        let record = StepRecord {
            candidates,
            selected_index: selected,
        };
        let chosen = record.selected();
        tracing::info!(
            task = %task.id,
            step = t,
            selected,
            status = %chosen.exec.status,
            r_total = chosen.rewards.r_total,
            "step committed"
        );
        let done = has_sentinel(&chosen.exec.stdout, rt.sentinel);
        history.push(history_entry(&chosen.step, &chosen.exec));
        traj.push_step(record);
        if done {
            break;
        }
    }
    drop(parent);

    let (answer, source) = compose_final_answer(task, &history, rt.composer, rt.sentinel);
    traj.answer_status = Some(judge_answer(rt.judge, task, &answer)?);
    traj.final_answer = answer;
    traj.answer_source = source;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use stepcode_core::LatentMethod;

    fn bundle(spot: u8, latent: f64) -> RewardBundle {
        RewardBundle::new(spot, LatentEstimate::prm(latent))
    }

    #[test]
    fn spot_off_zeroes_spots() {
        let cfg = EngineConfig {
            spot_enabled: false,
            ..EngineConfig::default()
        };
        let a = apply_ablation(&cfg, &[bundle(1, 0.2), bundle(0, 0.7)], &[true, false], 1);
        assert_eq!(a.rewards.iter().map(|r| r.r_spot).collect::<Vec<_>>(), vec![0, 0]);
        assert_eq!(a.rewards[1].r_total, 0.7);
        assert_eq!(a.pick, None);
    }

    #[test]
    fn both_on_is_identity() {
        let rewards = [bundle(1, 0.2), bundle(0, 0.7)];
        let a = apply_ablation(&EngineConfig::default(), &rewards, &[true, false], 9);
        assert_eq!(a.rewards, rewards);
        assert_eq!(a.pick, None);
    }

    #[test]
    fn latent_off_picks_among_executable_reproducibly() {
        let cfg = EngineConfig {
            latent_enabled: false,
            ..EngineConfig::default()
        };
        let rewards = [bundle(1, 0.9), bundle(1, 0.1)];
        let mut seen = [0usize; 2];
        for seed in 0..200 {
            let a = apply_ablation(&cfg, &rewards, &[true, true], seed);
            assert!(a.rewards.iter().all(|r| r.latent.value == 0.0 && r.latent.method == LatentMethod::Constant));
            let pick = a.pick.unwrap();
            assert_eq!(apply_ablation(&cfg, &rewards, &[true, true], seed).pick, Some(pick));
            seen[pick] += 1;
        }
        assert!(seen[0] > 60 && seen[1] > 60, "{seen:?}");
    }

    #[test]
    fn latent_off_single_executable_is_forced() {
        let cfg = EngineConfig {
            latent_enabled: false,
            ..EngineConfig::default()
        };
        for seed in 0..50 {
            let a = apply_ablation(&cfg, &[bundle(0, 0.0), bundle(1, 0.0), bundle(0, 0.0)], &[false, true, false], seed);
            assert_eq!(a.pick, Some(1));
        }
        let none = apply_ablation(&cfg, &[bundle(0, 0.0), bundle(0, 0.0)], &[false, false], 3);
        assert_eq!(none.pick, None);
        assert_eq!(select_candidate(&none.rewards).unwrap(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let cfg = EngineConfig {
            sentinel: " ".into(),
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
