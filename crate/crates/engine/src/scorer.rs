//! Latent scorers: rollouts, a remote PRM, or a constant.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use stepcode_core::chat::{http_agent, with_retries, Attempt, ChatError, RetryPolicy};
use stepcode_core::reward::latent_from_prm_scores;
use stepcode_core::{CodeStep, ExecutionResult, HyperParams, LatentEstimate, Task};

use crate::error::EngineError;
use crate::prompt::HistoryEntry;
use crate::rollout::{estimate_latent_by_rollout, RolloutConfig};
use crate::runtime::{history_entry, Runtime, Session};

/// One candidate to score, with the state it produced.
pub struct ScoreRequest<'r, 'g> {
    pub task: &'r Task,
    /// Steps committed before the candidate.
    pub prefix: &'r [HistoryEntry],
    pub candidate: &'r CodeStep,
    pub exec: &'r ExecutionResult,
    pub state: &'r Session<'g>,
}

pub trait LatentScorer: Send + Sync {
    fn score(&self, req: &ScoreRequest<'_, '_>) -> Result<LatentEstimate, EngineError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer(pub f64);

impl LatentScorer for ConstantScorer {
    fn score(&self, _req: &ScoreRequest<'_, '_>) -> Result<LatentEstimate, EngineError> {
        Ok(LatentEstimate::constant(self.0))
    }
}

/// Latent from continuations of the candidate's state.
pub struct RolloutScorer<'a> {
    pub runtime: Runtime<'a>,
    pub hp: HyperParams,
    pub config: RolloutConfig,
}

impl LatentScorer for RolloutScorer<'_> {
    fn score(&self, req: &ScoreRequest<'_, '_>) -> Result<LatentEstimate, EngineError> {
        let mut history = req.prefix.to_vec();
        history.push(history_entry(req.candidate, req.exec));
        estimate_latent_by_rollout(req.task, req.state, &history, &self.runtime, &self.hp, &self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrmScoresReply {
    pub s_yes: f64,
    pub s_no: f64,
}

/// Client for a process reward model served at `POST {base}/score`.
#[derive(Clone)]
pub struct PrmRemoteScorer {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl std::fmt::Debug for PrmRemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrmRemoteScorer").field("url", &self.url).finish_non_exhaustive()
    }
}

impl PrmRemoteScorer {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            url: format!("{}/score", base_url.trim_end_matches('/')),
            agent: http_agent(timeout),
            retry,
        }
    }

    /// Raw scores for a candidate text after `prefix`.
    pub fn fetch(&self, query: &str, prefix: &[HistoryEntry], candidate: &str) -> Result<PrmScoresReply, EngineError> {
        let body = json!({"query": query, "prefix": prefix, "candidate": candidate});
        with_retries(self.retry, || {
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(&body)
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                return Err(Attempt::Retry(format!("HTTP {status}")));
            }
            if status >= 400 {
                return Err(Attempt::Fatal(format!("HTTP {status}")));
            }
            resp.body_mut()
                .read_json::<PrmScoresReply>()
                .map_err(|e| Attempt::Fatal(e.to_string()))
        })
        .map_err(|e| match e {
            ChatError::Unreachable { .. } => EngineError::ScorerUnreachable(format!("{}: {e}", self.url)),
            ChatError::BadResponse(_) => EngineError::Scorer(format!("{}: {e}", self.url)),
        })
    }

    pub fn prm_remote_score(&self, query: &str, prefix: &[HistoryEntry], candidate: &str) -> Result<LatentEstimate, EngineError> {
        let s = self.fetch(query, prefix, candidate)?;
        Ok(LatentEstimate::prm(latent_from_prm_scores(s.s_yes, s.s_no)?))
    }
}

impl LatentScorer for PrmRemoteScorer {
    fn score(&self, req: &ScoreRequest<'_, '_>) -> Result<LatentEstimate, EngineError> {
        self.prm_remote_score(&req.task.query, req.prefix, &req.candidate.raw_model_output)
    }
}
