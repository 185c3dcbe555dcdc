//! Process rewards: the on-the-spot execution reward, the rollout and PRM
//! forms of the latent reward, their sum, argmax selection and the
//! two-candidate conflict taxonomy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExecStatus, ExecutionResult, HyperParams, RewardBundle};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("rollout total must be at least 1")]
    ZeroTotal,
    #[error("correct count {correct} exceeds total {total}")]
    CorrectExceedsTotal { correct: u32, total: u32 },
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("degenerate PRM scores: yes={yes}, no={no}")]
    DegenerateScores { yes: f64, no: f64 },
    #[error("no candidates to select from")]
    EmptyCandidates,
}

/// 1 iff the step executed successfully; every other status scores 0.
pub fn on_the_spot(exec: &ExecutionResult) -> u8 {
    u8::from(exec.status == ExecStatus::Success)
}

/// Fraction of rollouts judged solved.
pub fn raw_latent(delta_correct: u32, delta_total: u32) -> Result<f64, RewardError> {
    if delta_total == 0 {
        return Err(RewardError::ZeroTotal);
    }
    if delta_correct > delta_total {
        return Err(RewardError::CorrectExceedsTotal {
            correct: delta_correct,
            total: delta_total,
        });
    }
    Ok(f64::from(delta_correct) / f64::from(delta_total))
}

/// `alpha^(1 - lr) * beta^(tau / L)`.
///
/// `lr` is the solved fraction, `tau` the mean continuation length. The
/// first factor discounts paths that rarely solve the task; the second
/// discounts long continuations.
pub fn latent_from_rollouts(lr: f64, tau: f64, hp: &HyperParams) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&lr) {
        return Err(RewardError::Domain(format!("lr {lr} not in [0,1]")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(RewardError::Domain(format!("tau {tau} must be >= 0")));
    }
    let unit = |v: f64| v > 0.0 && v <= 1.0;
    if !unit(hp.alpha) || !unit(hp.beta) || hp.big_l.is_nan() || hp.big_l <= 0.0 {
        return Err(RewardError::Domain(format!(
            "alpha={}, beta={}, L={} out of range",
            hp.alpha, hp.beta, hp.big_l
        )));
    }
    Ok(hp.alpha.powf(1.0 - lr) * hp.beta.powf(tau / hp.big_l))
}

/// Normalized PRM score `yes / (yes + no)` over nonnegative label scores.
pub fn latent_from_prm_scores(s_yes: f64, s_no: f64) -> Result<f64, RewardError> {
    if !(s_yes >= 0.0 && s_no >= 0.0) || !s_yes.is_finite() || !s_no.is_finite() {
        return Err(RewardError::Domain(format!(
            "PRM scores must be finite and nonnegative, got ({s_yes}, {s_no})"
        )));
    }
    let sum = s_yes + s_no;
    if sum == 0.0 {
        return Err(RewardError::DegenerateScores { yes: s_yes, no: s_no });
    }
    Ok(s_yes / sum)
}

pub fn cumulative(r_spot: u8, r_latent: f64) -> f64 {
    f64::from(r_spot) + r_latent
}

/// Index of the highest `r_total`; ties go to the lowest index.
pub fn select_candidate(candidates: &[RewardBundle]) -> Result<usize, RewardError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        match best {
            Some((_, v)) if c.r_total <= v => {}
            _ => best = Some((i, c.r_total)),
        }
    }
    best.map(|(i, _)| i).ok_or(RewardError::EmptyCandidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictCase {
    /// Both candidates executed.
    Case1,
    /// Neither executed.
    Case2,
    /// Exactly one executed and it has the strictly higher latent.
    Case3,
    /// Exactly one executed but its latent is not higher: the reward conflict.
    Case4,
}

impl ConflictCase {
    pub const ALL: [ConflictCase; 4] = [
        ConflictCase::Case1,
        ConflictCase::Case2,
        ConflictCase::Case3,
        ConflictCase::Case4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConflictCase::Case1 => "case1",
            ConflictCase::Case2 => "case2",
            ConflictCase::Case3 => "case3",
            ConflictCase::Case4 => "case4",
        }
    }
}

pub fn classify_conflict(a: &RewardBundle, b: &RewardBundle) -> ConflictCase {
    match (a.r_spot, b.r_spot) {
        (1, 1) => ConflictCase::Case1,
        (0, 0) => ConflictCase::Case2,
        _ => {
            let (exec, other) = if a.r_spot == 1 { (a, b) } else { (b, a) };
            if exec.latent.value > other.latent.value {
                ConflictCase::Case3
            } else {
                ConflictCase::Case4
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentEstimate;
    use proptest::prelude::*;

    fn hp() -> HyperParams {
        HyperParams::default()
    }

    fn bundle(spot: u8, latent: f64) -> RewardBundle {
        RewardBundle::new(spot, LatentEstimate::prm(latent))
    }

    fn exec(status: ExecStatus) -> ExecutionResult {
        ExecutionResult {
            status,
            stdout: String::new(),
            stderr: String::new(),
            wall_time_ms: 0,
            tool_calls: vec![],
        }
    }

    #[test]
    fn spot_reward_by_status() {
        assert_eq!(on_the_spot(&exec(ExecStatus::Success)), 1);
        assert_eq!(on_the_spot(&exec(ExecStatus::RuntimeError)), 0);
        assert_eq!(on_the_spot(&exec(ExecStatus::Timeout)), 0);
        assert_eq!(on_the_spot(&exec(ExecStatus::ProtocolError)), 0);
    }

    #[test]
    fn raw_latent_ratios() {
        assert_eq!(raw_latent(2, 4), Ok(0.5));
        assert_eq!(raw_latent(0, 4), Ok(0.0));
        assert_eq!(raw_latent(4, 4), Ok(1.0));
        assert_eq!(raw_latent(1, 0), Err(RewardError::ZeroTotal));
        assert!(raw_latent(5, 4).is_err());
    }

    #[test]
    fn latent_examples() {
        assert_eq!(latent_from_rollouts(1.0, 0.0, &hp()).unwrap(), 1.0);
        // 0.5^1 * 0.9^1
        assert!((latent_from_rollouts(0.0, 10.0, &hp()).unwrap() - 0.45).abs() < 1e-12);
        // sqrt(0.5) * sqrt(0.9)
        let v = latent_from_rollouts(0.5, 5.0, &hp()).unwrap();
        assert!((v - 0.670_820_393_249_936_9).abs() < 1e-9, "{v}");
    }

    #[test]
    fn latent_domain_errors() {
        assert!(latent_from_rollouts(1.5, 0.0, &hp()).is_err());
        assert!(latent_from_rollouts(0.5, -1.0, &hp()).is_err());
        assert!(latent_from_rollouts(0.5, f64::NAN, &hp()).is_err());
    }

    #[test]
    fn prm_normalization() {
        assert_eq!(latent_from_prm_scores(3.0, 1.0), Ok(0.75));
        assert_eq!(latent_from_prm_scores(0.0, 5.0), Ok(0.0));
        assert_eq!(latent_from_prm_scores(2.0, 2.0), Ok(0.5));
        assert!(matches!(
            latent_from_prm_scores(0.0, 0.0),
            Err(RewardError::DegenerateScores { .. })
        ));
        assert!(latent_from_prm_scores(-1.0, 2.0).is_err());
    }

    #[test]
    fn cumulative_sums() {
        assert_eq!(cumulative(1, 0.45), 1.45);
        assert_eq!(cumulative(0, 0.0), 0.0);
        assert_eq!(cumulative(1, 1.0), 2.0);
    }

    #[test]
    fn selection_examples() {
        let c = [bundle(1, 0.45), bundle(0, 0.9), bundle(1, 0.45)];
        assert_eq!(select_candidate(&c), Ok(0));
        let c = [bundle(0, 0.2), bundle(1, 0.7)];
        assert_eq!(select_candidate(&c), Ok(1));
        assert_eq!(select_candidate(&[]), Err(RewardError::EmptyCandidates));
    }

    #[test]
    fn conflict_examples() {
        assert_eq!(classify_conflict(&bundle(1, 0.1), &bundle(1, 0.9)), ConflictCase::Case1);
        assert_eq!(classify_conflict(&bundle(0, 0.1), &bundle(0, 0.9)), ConflictCase::Case2);
        assert_eq!(classify_conflict(&bundle(1, 0.8), &bundle(0, 0.3)), ConflictCase::Case3);
        assert_eq!(classify_conflict(&bundle(1, 0.3), &bundle(0, 0.8)), ConflictCase::Case4);
        // equality is a conflict, and order of the pair does not matter
        assert_eq!(classify_conflict(&bundle(0, 0.5), &bundle(1, 0.5)), ConflictCase::Case4);
        assert_eq!(classify_conflict(&bundle(0, 0.3), &bundle(1, 0.8)), ConflictCase::Case3);
    }

    proptest! {
        #[test]
        fn latent_monotone_in_lr(lr1 in 0.0f64..=1.0, lr2 in 0.0f64..=1.0, tau in 0.0f64..50.0,
                                 alpha in 0.01f64..0.99, beta in 0.01f64..0.99) {
            let hp = HyperParams { alpha, beta, ..HyperParams::default() };
            let (lo, hi) = if lr1 < lr2 { (lr1, lr2) } else { (lr2, lr1) };
            prop_assume!(hi - lo > 1e-9);
            let a = latent_from_rollouts(lo, tau, &hp).unwrap();
            let b = latent_from_rollouts(hi, tau, &hp).unwrap();
            prop_assert!(a < b);
        }

        #[test]
        fn latent_monotone_in_tau(lr in 0.0f64..=1.0, t1 in 0.0f64..50.0, t2 in 0.0f64..50.0,
                                  beta in 0.01f64..0.99) {
            let hp = HyperParams { beta, ..HyperParams::default() };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(latent_from_rollouts(lr, lo, &hp).unwrap() > latent_from_rollouts(lr, hi, &hp).unwrap());
        }

        #[test]
        fn alpha_one_ignores_lr(lr1 in 0.0f64..=1.0, lr2 in 0.0f64..=1.0, tau in 0.0f64..50.0) {
            let hp = HyperParams { alpha: 1.0, ..HyperParams::default() };
            prop_assert_eq!(latent_from_rollouts(lr1, tau, &hp).unwrap(), latent_from_rollouts(lr2, tau, &hp).unwrap());
        }

        #[test]
        fn reward_ranges(lr in 0.0f64..=1.0, tau in 0.0f64..1000.0, y in 0.0f64..100.0, n in 0.0f64..100.0,
                         spot in 0u8..=1) {
            let v = latent_from_rollouts(lr, tau, &hp()).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
            prop_assume!(y + n > 0.0);
            let p = latent_from_prm_scores(y, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let total = cumulative(spot, p);
            prop_assert!((0.0..=2.0).contains(&total));
            let b = RewardBundle::new(spot, LatentEstimate::prm(p));
            prop_assert_eq!(b.r_total - (f64::from(b.r_spot) + b.latent.value), 0.0);
        }

        #[test]
        fn argmax_scale_invariant(vals in proptest::collection::vec(0.0f64..2.0, 1..8), k in 0.01f64..100.0) {
            let base: Vec<RewardBundle> = vals.iter().map(|v| RewardBundle { r_spot: 0, latent: LatentEstimate::prm(0.0), r_total: *v }).collect();
            let scaled: Vec<RewardBundle> = vals.iter().map(|v| RewardBundle { r_spot: 0, latent: LatentEstimate::prm(0.0), r_total: v * k }).collect();
            prop_assert_eq!(select_candidate(&base).unwrap(), select_candidate(&scaled).unwrap());
        }

        #[test]
        fn argmax_lowest_tie(vals in proptest::collection::vec(0u8..4, 1..8)) {
            let bundles: Vec<RewardBundle> = vals.iter().map(|v| bundle(0, f64::from(*v) / 4.0)).collect();
            let idx = select_candidate(&bundles).unwrap();
            let max = bundles.iter().map(|b| b.r_total).fold(f64::MIN, f64::max);
            prop_assert_eq!(bundles[idx].r_total, max);
            prop_assert!(bundles[..idx].iter().all(|b| b.r_total < max));
        }

        #[test]
        fn conflict_partition(sa in 0u8..=1, sb in 0u8..=1, la in 0.0f64..=1.0, lb in 0.0f64..=1.0) {
            let a = bundle(sa, la);
            let b = bundle(sb, lb);
            let case = classify_conflict(&a, &b);
            let holds = [
                sa == 1 && sb == 1,
                sa == 0 && sb == 0,
                sa != sb && (if sa == 1 { la > lb } else { lb > la }),
                sa != sb && (if sa == 1 { la <= lb } else { lb <= la }),
            ];
            prop_assert_eq!(holds.iter().filter(|h| **h).count(), 1);
            prop_assert!(holds[ConflictCase::ALL.iter().position(|c| *c == case).unwrap()]);
            prop_assert_eq!(case, classify_conflict(&b, &a));
        }
    }
}
