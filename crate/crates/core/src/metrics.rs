//! Aggregate metrics over finished trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RewardBundle, Trajectory};
use crate::reward::{classify_conflict, ConflictCase};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no committed steps in any trajectory")]
    ZeroSteps,
    #[error("no trajectories")]
    Empty,
}

/// Successful code execution proportion over committed steps only.
pub fn scep(trajectories: &[Trajectory]) -> Result<f64, MetricError> {
    let (mut ok, mut total) = (0usize, 0usize);
    for t in trajectories {
        for c in t.selected_steps() {
            total += 1;
            ok += usize::from(c.exec.is_success());
        }
    }
    if total == 0 {
        return Err(MetricError::ZeroSteps);
    }
    Ok(ok as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTokens {
    pub avg_depth: f64,
    pub total_tokens: u64,
    pub avg_tokens: f64,
}

pub fn depth_and_tokens(trajectories: &[Trajectory]) -> Result<DepthTokens, MetricError> {
    if trajectories.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = trajectories.len() as f64;
    let depth: u64 = trajectories.iter().map(|t| u64::from(t.depth)).sum();
    let total_tokens: u64 = trajectories.iter().map(|t| t.total_tokens).sum();
    Ok(DepthTokens {
        avg_depth: depth as f64 / n,
        total_tokens,
        avg_tokens: total_tokens as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictDistribution {
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
}

impl ConflictDistribution {
    pub fn count(&self, case: ConflictCase) -> usize {
        self.counts.get(case.label()).copied().unwrap_or(0)
    }

    pub fn percentage(&self, case: ConflictCase) -> f64 {
        self.percentages.get(case.label()).copied().unwrap_or(0.0)
    }
}

/// Classify every candidate pair and tabulate the four cases.
pub fn conflict_distribution<'a, I>(pairs: I) -> ConflictDistribution
where
    I: IntoIterator<Item = (&'a RewardBundle, &'a RewardBundle)>,
{
    let mut counts: BTreeMap<String, usize> = ConflictCase::ALL
        .iter()
        .map(|c| (c.label().to_string(), 0))
        .collect();
    let mut total = 0;
    for (a, b) in pairs {
        *counts.entry(classify_conflict(a, b).label().to_string()).or_default() += 1;
        total += 1;
    }
    let percentages = counts
        .iter()
        .map(|(k, v)| {
            let pct = if total == 0 { 0.0 } else { 100.0 * *v as f64 / total as f64 };
            (k.clone(), pct)
        })
        .collect();
    ConflictDistribution {
        total,
        counts,
        percentages,
    }
}

/// Conflict statistics over every recorded step that had exactly two candidates.
pub fn conflict_stats(trajectories: &[Trajectory]) -> ConflictDistribution {
    conflict_distribution(
        trajectories
            .iter()
            .flat_map(|t| t.steps.iter())
            .filter(|s| s.candidates.len() == 2)
            .map(|s| (&s.candidates[0].rewards, &s.candidates[1].rewards)),
    )
}
