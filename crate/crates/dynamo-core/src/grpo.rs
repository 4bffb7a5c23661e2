//! Group-relative baseline mechanics: group-normalized advantages,
//! importance ratios, the clip gate, the composite update coefficient
//! `xi = gate * ratio * advantage`, and the clipped surrogate objective.
//!
//! Rewards are binary. A group where every reward is identical carries no
//! learning signal and maps to all-zero advantages rather than dividing by
//! an epsilon floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::StateKey;
use crate::ProblemId;

/// Floor applied to small-but-nonzero standard deviations. Degenerate
/// all-equal groups never reach it; they short-circuit to zero advantages.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group size {0} too small; group normalization needs at least 2")]
    GroupTooSmall(usize),
    #[error("reward {0} is not binary")]
    NonBinaryReward(u8),
    #[error("rewards length {rewards} does not match responses length {responses}")]
    LengthMismatch { rewards: usize, responses: usize },
    #[error("log-probabilities must be <= 0 and finite, got {0}")]
    InvalidLogProb(f64),
    #[error("ratio must be positive, got {0}")]
    InvalidRatio(f64),
    #[error("no token records")]
    Empty,
}

/// Divisor convention for the group standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by G. Matches common implementations and the desk checks here.
    #[default]
    Population,
    /// Divide by G - 1.
    Sample,
}

/// Group-normalized advantages `(R - mean) / max(std, floor)` with the
/// default population-std convention. All-equal groups return zeros.
pub fn group_advantage(rewards: &[u8]) -> Result<Vec<f64>, GrpoError> {
    group_advantage_with_mode(rewards, StdMode::Population)
}

pub fn group_advantage_with_mode(rewards: &[u8], mode: StdMode) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    for r in rewards {
        if *r > 1 {
            return Err(GrpoError::NonBinaryReward(*r));
        }
    }
    let vals: Vec<f64> = rewards.iter().map(|r| *r as f64).collect();
    let mean = vals.iter().sum::<f64>() / g as f64;
    let sq_dev: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sq_dev == 0.0 {
        return Ok(vec![0.0; g]);
    }
    let divisor = match mode {
        StdMode::Population => g as f64,
        StdMode::Sample => (g - 1) as f64,
    };
    let std = (sq_dev / divisor).sqrt().max(STD_FLOOR);
    Ok(vals.into_iter().map(|v| (v - mean) / std).collect())
}

/// Importance sampling ratio `exp(logp_new - logp_old)`.
pub fn importance_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// True when the unclipped branch of `min(r*A, clip(r)*A)` is active, i.e.
/// the token still contributes gradient. The gate closes when a positive
/// advantage meets a ratio above `1+eps` or a negative one meets a ratio
/// below `1-eps`.
pub fn clip_gate(ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    debug_assert!((0.0..1.0).contains(&clip_eps), "clip_eps in (0,1)");
    !(advantage > 0.0 && ratio > 1.0 + clip_eps) && !(advantage < 0.0 && ratio < 1.0 - clip_eps)
}

/// Composite update coefficient `xi = gate * ratio * advantage`; the scalar
/// that scales the token's logit update. Clipped tokens contribute zero.
pub fn composite_coefficient(gate: bool, ratio: f64, advantage: f64) -> f64 {
    if gate {
        ratio * advantage
    } else {
        0.0
    }
}

/// One problem's sampled responses with binary rewards and the sampling-time
/// log-probabilities. Serializes to JSON for replay and debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub problem_id: ProblemId,
    /// Token-index sequences, one per response.
    pub responses: Vec<Vec<usize>>,
    /// Binary rewards aligned with `responses`.
    pub rewards: Vec<u8>,
    /// Per-response, per-token `log pi_old`, shaped exactly like `responses`.
    pub old_logprobs: Vec<Vec<f64>>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn successes(&self) -> u64 {
        self.rewards.iter().map(|r| *r as u64).sum()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.rewards.len() != self.responses.len() {
            return Err(GrpoError::LengthMismatch {
                rewards: self.rewards.len(),
                responses: self.responses.len(),
            });
        }
        if self.old_logprobs.len() != self.responses.len() {
            return Err(GrpoError::LengthMismatch {
                rewards: self.old_logprobs.len(),
                responses: self.responses.len(),
            });
        }
        for r in &self.rewards {
            if *r > 1 {
                return Err(GrpoError::NonBinaryReward(*r));
            }
        }
        for (resp, lps) in self.responses.iter().zip(&self.old_logprobs) {
            if resp.len() != lps.len() {
                return Err(GrpoError::LengthMismatch {
                    rewards: lps.len(),
                    responses: resp.len(),
                });
            }
            for lp in lps {
                if !lp.is_finite() || *lp > 0.0 {
                    return Err(GrpoError::InvalidLogProb(*lp));
                }
            }
        }
        Ok(())
    }
}

/// Per-token record driving the objective and the logit update.
/// `clip_active` is true when the token is clipped (gate closed), so
/// `xi = (!clip_active) * ratio * advantage` by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenUpdateRecord {
    pub state_key: StateKey,
    pub action: usize,
    pub advantage: f64,
    pub ratio: f64,
    pub clip_active: bool,
    pub xi: f64,
    pub token_entropy: f64,
}

impl TokenUpdateRecord {
    pub fn new(
        state_key: StateKey,
        action: usize,
        advantage: f64,
        ratio: f64,
        clip_eps: f64,
        token_entropy: f64,
    ) -> Result<Self, GrpoError> {
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(GrpoError::InvalidRatio(ratio));
        }
        let gate = clip_gate(ratio, advantage, clip_eps);
        Ok(TokenUpdateRecord {
            state_key,
            action,
            advantage,
            ratio,
            clip_active: !gate,
            xi: composite_coefficient(gate, ratio, advantage),
            token_entropy,
        })
    }
}

/// Clipped surrogate for one prompt's tokens:
/// `(1/total_tokens) * sum min(r*A, clip(r, 1-eps, 1+eps)*A)`.
pub fn surrogate_objective(records: &[TokenUpdateRecord], clip_eps: f64) -> Result<f64, GrpoError> {
    if records.is_empty() {
        return Err(GrpoError::Empty);
    }
    let total: f64 = records
        .iter()
        .map(|rec| {
            let clipped = rec.ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            (rec.ratio * rec.advantage).min(clipped * rec.advantage)
        })
        .sum();
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> StateKey {
        StateKey::new(&ProblemId::from("p"), &[])
    }

    fn record(advantage: f64, ratio: f64) -> TokenUpdateRecord {
        TokenUpdateRecord::new(key(), 0, advantage, ratio, 0.2, 1.0).unwrap()
    }

    #[test]
    fn advantage_balanced_group() {
        let adv = group_advantage(&[1, 1, 0, 0]).unwrap();
        assert_eq!(adv, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn advantage_degenerate_group_is_zero() {
        assert_eq!(group_advantage(&[1, 1, 1, 1]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantage(&[0, 0]).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn advantage_single_success() {
        let adv = group_advantage(&[1, 0, 0, 0]).unwrap();
        assert!((adv[0] - 1.7320508).abs() < 1e-6);
        for a in &adv[1..] {
            assert!((a + 0.5773503).abs() < 1e-6);
        }
        let mean: f64 = adv.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let var: f64 = adv.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn advantage_sample_mode_differs() {
        let pop = group_advantage_with_mode(&[1, 0, 0, 0], StdMode::Population).unwrap();
        let samp = group_advantage_with_mode(&[1, 0, 0, 0], StdMode::Sample).unwrap();
        assert!(samp[0] < pop[0]);
    }

    #[test]
    fn advantage_rejects_small_or_non_binary() {
        assert_eq!(group_advantage(&[1]), Err(GrpoError::GroupTooSmall(1)));
        assert_eq!(group_advantage(&[1, 2]), Err(GrpoError::NonBinaryReward(2)));
    }

    #[test]
    fn ratio_values() {
        assert_eq!(importance_ratio(-1.5, -1.5), 1.0);
        assert!((importance_ratio(-1.0, -1.0 - 2f64.ln()) - 2.0).abs() < 1e-12);
        assert!((importance_ratio(-2.0 - 4f64.ln(), -2.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gate_cases() {
        assert!(clip_gate(1.0, 1.0, 0.2));
        assert!(!clip_gate(1.5, 1.0, 0.2));
        assert!(!clip_gate(0.5, -1.0, 0.2));
        // Negative advantage with a high ratio stays open (min picks r*A).
        assert!(clip_gate(1.5, -1.0, 0.2));
        assert!(clip_gate(0.5, 1.0, 0.2));
        // Zero advantage never closes the gate.
        assert!(clip_gate(5.0, 0.0, 0.2));
    }

    #[test]
    fn coefficient_cases() {
        assert_eq!(composite_coefficient(true, 1.0, 0.8), 0.8);
        assert_eq!(composite_coefficient(false, 1.5, 1.0), 0.0);
        assert!((composite_coefficient(true, 0.9, -1.0) + 0.9).abs() < 1e-12);
    }

    #[test]
    fn record_enforces_xi_identity() {
        let rec = record(1.0, 1.5);
        assert!(rec.clip_active);
        assert_eq!(rec.xi, 0.0);
        let rec = record(-1.0, 1.5);
        assert!(!rec.clip_active);
        assert!((rec.xi + 1.5).abs() < 1e-12);
        assert!(TokenUpdateRecord::new(key(), 0, 1.0, 0.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate_objective(&[record(1.0, 1.0)], 0.2).unwrap(), 1.0);
        let v = surrogate_objective(&[record(1.0, 1.5)], 0.2).unwrap();
        assert!((v - 1.2).abs() < 1e-12);
        let v = surrogate_objective(&[record(1.0, 1.0), record(-1.0, 1.0)], 0.2).unwrap();
        assert!(v.abs() < 1e-15);
        assert_eq!(surrogate_objective(&[], 0.2), Err(GrpoError::Empty));
    }

    #[test]
    fn surrogate_derivative_equals_xi_when_gate_open() {
        // d/dlogp_new of min(rA, clip(r)A) with r = exp(logp_new - logp_old)
        // equals xi on the unclipped branch; checked by central differences.
        let cases = [
            (0.8, -1.2, -1.2),  // ratio well inside the band
            (1.5, -0.8, -1.2),  // positive-A clipped: derivative 0
            (0.5, -1.9, -1.2),  // negative-A clipped: derivative 0
            (-0.7, -1.0, -0.9), // negative advantage, gate open
        ];
        for (advantage, logp_new, logp_old) in cases {
            let ratio = importance_ratio(logp_new, logp_old);
            let gate = clip_gate(ratio, advantage, 0.2);
            let xi = composite_coefficient(gate, ratio, advantage);
            let h = 1e-6;
            let eval = |lp: f64| {
                let r = importance_ratio(lp, logp_old);
                (r * advantage).min(r.clamp(0.8, 1.2) * advantage)
            };
            let fd = (eval(logp_new + h) - eval(logp_new - h)) / (2.0 * h);
            assert!(
                (fd - xi).abs() < 1e-5,
                "fd {fd} vs xi {xi} for A={advantage}"
            );
        }
    }

    #[test]
    fn rollout_group_json_schema() {
        let group = RolloutGroup {
            problem_id: ProblemId::from("p7"),
            responses: vec![vec![2, 0]],
            rewards: vec![1],
            old_logprobs: vec![vec![-0.7, -1.2]],
        };
        let json = serde_json::to_string(&group).unwrap();
        assert_eq!(
            json,
            "{\"problem_id\":\"p7\",\"responses\":[[2,0]],\"rewards\":[1],\
             \"old_logprobs\":[[-0.7,-1.2]]}"
        );
        let back: RolloutGroup = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back, group);
    }

    #[test]
    fn rollout_group_validation() {
        let good = RolloutGroup {
            problem_id: ProblemId::from("p"),
            responses: vec![vec![0, 1], vec![1, 1]],
            rewards: vec![1, 0],
            old_logprobs: vec![vec![-0.5, -0.2], vec![-0.1, -0.9]],
        };
        good.validate().unwrap();
        assert_eq!(good.successes(), 1);

        let mut bad = good.clone();
        bad.rewards = vec![1];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.old_logprobs[0][0] = 0.5;
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.rewards[0] = 3;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rewards in prop::collection::vec(0u8..2, 2..64)) {
            let adv = group_advantage(&rewards).unwrap();
            let g = adv.len() as f64;
            let mean: f64 = adv.iter().sum::<f64>() / g;
            prop_assert!(mean.abs() < 1e-12);
            let ones: u64 = rewards.iter().map(|r| *r as u64).sum();
            if ones != 0 && ones != rewards.len() as u64 {
                let var: f64 = adv.iter().map(|a| a * a).sum::<f64>() / g;
                prop_assert!((var - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(adv.iter().all(|a| *a == 0.0));
            }
        }

        #[test]
        fn binary_zero_sum_property(g in 2usize..64, k_raw in 0usize..64) {
            let k = k_raw % (g + 1);
            if k > 0 && k < g {
                let rewards: Vec<u8> = (0..g).map(|i| u8::from(i < k)).collect();
                let adv = group_advantage(&rewards).unwrap();
                let positive = adv[0];
                let negative = adv[g - 1];
                prop_assert!(
                    (positive * k as f64 + negative * (g - k) as f64).abs() < 1e-9
                );
            }
        }
    }
}
