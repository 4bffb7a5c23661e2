//! Gradient-aware advantage modulation.
//!
//! Two factors multiply each token's advantage:
//!
//! - A compensation factor for positive-advantage tokens,
//!   `g(H) = 1 + alpha * (H_max - H) / (H_max - H_min)`, which amplifies
//!   low-entropy (high-confidence) correct actions to counter softmax
//!   gradient attenuation. Negative and zero advantages pass through
//!   unmodified so penalty signals stay intact.
//! - A stabilization factor damping tokens whose update would move entropy
//!   the most: the first-order entropy-change estimate
//!
//!   ```text
//!   dH ~= -lr * xi * [ pi(a) L(a) - sum_k pi(k)^2 L(k) ]
//!   ```
//!
//!   (with `L` the centered log-probability) is folded into an instability
//!   indicator `|dH|`, normalized by the batch maximum, and passed through
//!   the sigmoid decay `f(x) = l_min + (1 - l_min) * sigmoid(-gamma (x - tau))`
//!   with `l_min = 1 - alpha`.
//!
//! With `alpha = 0` both factors are identically 1 and the objective reduces
//! to plain GRPO. Batch statistics (`H_min`, `H_max`, max `|dH|`) come from
//! all tokens of the current training batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::entropy;

#[derive(Debug, Error, PartialEq)]
pub enum ModulationError {
    #[error("alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("tau must lie in [0, 1], got {0}")]
    InvalidTau(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
}

/// Modulation hyperparameters. `lambda_min` is derived as `1 - alpha`
/// rather than stored, so the coupling between the maximum compensation and
/// the stabilization floor cannot drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    /// Maximum compensation; also fixes the stabilization floor `1 - alpha`.
    pub alpha: f64,
    /// Sigmoid sharpness of the stabilization decay.
    pub gamma: f64,
    /// Normalized entropy-change threshold where the decay activates.
    pub tau: f64,
    /// Learning rate used in the first-order entropy-change estimate.
    pub lr: f64,
}

impl ModulationConfig {
    pub fn new(alpha: f64, gamma: f64, tau: f64, lr: f64) -> Result<Self, ModulationError> {
        let config = ModulationConfig {
            alpha,
            gamma,
            tau,
            lr,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ModulationError> {
        if !self.alpha.is_finite() || !(0.0..1.0).contains(&self.alpha) {
            return Err(ModulationError::InvalidAlpha(self.alpha));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(ModulationError::InvalidGamma(self.gamma));
        }
        if !self.tau.is_finite() || !(0.0..=1.0).contains(&self.tau) {
            return Err(ModulationError::InvalidTau(self.tau));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(ModulationError::InvalidLearningRate(self.lr));
        }
        Ok(())
    }

    /// Stabilization floor `1 - alpha`.
    pub fn lambda_min(&self) -> f64 {
        1.0 - self.alpha
    }
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig {
            alpha: 0.2,
            gamma: 10.0,
            tau: 0.5,
            lr: 1e-3,
        }
    }
}

/// Batch-level reduction feeding both factors: entropy range across all
/// tokens and the largest instability indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEntropyStats {
    pub h_min: f64,
    pub h_max: f64,
    pub max_instability: f64,
}

impl BatchEntropyStats {
    /// Reduces per-token `(entropy, instability)` pairs. Returns `None` for
    /// an empty batch.
    pub fn from_tokens<I>(tokens: I) -> Option<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut stats: Option<BatchEntropyStats> = None;
        for (h, xi) in tokens {
            let s = stats.get_or_insert(BatchEntropyStats {
                h_min: h,
                h_max: h,
                max_instability: 0.0,
            });
            s.h_min = s.h_min.min(h);
            s.h_max = s.h_max.max(h);
            s.max_instability = s.max_instability.max(xi);
        }
        stats
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Compensation curve `g(H) = 1 + alpha * (H_max - H) / (H_max - H_min)`,
/// linear from `1 + alpha` at the batch entropy minimum down to 1 at the
/// maximum. Entropies outside the batch range are clamped in; a degenerate
/// range (`H_max == H_min`) yields 1 for every token.
pub fn compensation_function(h: f64, stats: &BatchEntropyStats, alpha: f64) -> f64 {
    let range = stats.h_max - stats.h_min;
    if range <= 0.0 {
        return 1.0;
    }
    let h = h.clamp(stats.h_min, stats.h_max);
    1.0 + alpha * (stats.h_max - h) / range
}

/// Compensation factor: `g(h)` for positive advantages, exactly 1 for
/// `advantage <= 0` (penalties are never amplified).
pub fn compensation_factor(advantage: f64, h: f64, stats: &BatchEntropyStats, alpha: f64) -> f64 {
    if advantage > 0.0 {
        compensation_function(h, stats, alpha)
    } else {
        1.0
    }
}

/// Single-sample first-order estimate of the entropy change caused by the
/// logit update for `sampled_action` with coefficient `xi`:
/// `-lr * xi * [pi(a) L(a) - sum_k pi(k)^2 L(k)]`.
///
/// Zero-probability entries contribute nothing (the `p log p -> 0` limit).
/// Uniform distributions and clipped tokens (`xi = 0`) both give exactly 0.
pub fn estimate_entropy_change(probs: &[f64], sampled_action: usize, xi: f64, lr: f64) -> f64 {
    assert!(sampled_action < probs.len(), "action out of range");
    if xi == 0.0 {
        return 0.0;
    }
    let h = entropy(probs);
    let sampled_term = if probs[sampled_action] > 0.0 {
        let lam = probs[sampled_action].ln() + h;
        probs[sampled_action] * lam
    } else {
        0.0
    };
    let concentration_term: f64 = probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p * (p.ln() + h))
        .sum();
    -lr * xi * (sampled_term - concentration_term)
}

/// Expectation of the single-sample estimate over sampled actions, each with
/// its own coefficient: `-lr * sum_a pi(a)^2 L(a) xi(a)`. This is the
/// factorized form the single-sample expansion averages to when the
/// coefficients are mean-zero under the policy (which group normalization
/// provides); kept as a diagnostic and test oracle, not used by the trainer.
pub fn factorized_entropy_change(probs: &[f64], xis: &[f64], lr: f64) -> f64 {
    assert_eq!(probs.len(), xis.len(), "one coefficient per action");
    let h = entropy(probs);
    let sum: f64 = probs
        .iter()
        .zip(xis)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, xi)| p * p * (p.ln() + h) * xi)
        .sum();
    -lr * sum
}

/// Token-level instability indicator: the magnitude of the estimated
/// entropy change.
pub fn instability_indicator(delta_h: f64) -> f64 {
    delta_h.abs()
}

/// Sigmoid-decayed stabilization factor
/// `f(x) = l_min + (1 - l_min) * sigmoid(-gamma (x - tau))` evaluated at the
/// batch-normalized instability `x = instability / max_instability`.
/// A batch with no instability anywhere (every token clipped or uniform)
/// uses `x = 0` rather than dividing by zero.
pub fn stabilization_factor(
    instability: f64,
    stats: &BatchEntropyStats,
    config: &ModulationConfig,
) -> f64 {
    debug_assert!(instability >= 0.0);
    let x = if stats.max_instability > 0.0 {
        (instability / stats.max_instability).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let lambda_min = config.lambda_min();
    lambda_min + (1.0 - lambda_min) * sigmoid(-config.gamma * (x - config.tau))
}

/// Final modulated advantage `A * beta_comp * beta_stab`. Both factors are
/// positive, so the sign of the advantage is preserved.
pub fn modulate_advantage(advantage: f64, beta_comp: f64, beta_stab: f64) -> f64 {
    debug_assert!(beta_comp > 0.0 && beta_stab > 0.0);
    advantage * beta_comp * beta_stab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{apply_logit_update, softmax};
    use proptest::prelude::*;

    fn stats(h_min: f64, h_max: f64, max_instability: f64) -> BatchEntropyStats {
        BatchEntropyStats {
            h_min,
            h_max,
            max_instability,
        }
    }

    #[test]
    fn compensation_endpoints_and_midpoint() {
        let s = stats(0.5, 1.5, 0.0);
        assert_eq!(compensation_function(1.5, &s, 0.2), 1.0);
        assert!((compensation_function(0.5, &s, 0.2) - 1.2).abs() < 1e-15);
        assert!((compensation_function(1.0, &s, 0.2) - 1.1).abs() < 1e-15);
        // Out-of-range entropies clamp to the batch range.
        assert!((compensation_function(-3.0, &s, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(compensation_function(9.0, &s, 0.2), 1.0);
    }

    #[test]
    fn compensation_degenerate_range_is_identity() {
        let s = stats(1.0, 1.0, 0.0);
        assert_eq!(compensation_function(1.0, &s, 0.5), 1.0);
    }

    #[test]
    fn compensation_factor_branches() {
        let s = stats(0.0, 2.0, 0.0);
        assert_eq!(compensation_factor(-0.5, 0.3, &s, 0.2), 1.0);
        assert_eq!(compensation_factor(0.0, 0.3, &s, 0.2), 1.0);
        assert!((compensation_factor(1.0, 0.0, &s, 0.2) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn entropy_change_uniform_and_clipped_are_zero() {
        let uniform = vec![0.125; 8];
        assert_eq!(estimate_entropy_change(&uniform, 3, 1.7, 0.1), 0.0);
        let probs = [0.7, 0.2, 0.1];
        assert_eq!(estimate_entropy_change(&probs, 0, 0.0, 0.1), 0.0);
    }

    #[test]
    fn entropy_change_hand_value() {
        // probs [0.9, 0.1], action 0, xi 1, lr 0.1:
        // L(0) = ln 0.9 + H = 0.2197225, L(1) = ln 0.1 + H = -1.9775021,
        // estimate = -0.1 * (0.9*L(0) - (0.81*L(0) + 0.01*L(1)))
        //          = -0.1 * (0.1977502 - 0.1582002) = -0.0039550.
        let probs = [0.9, 0.1];
        let est = estimate_entropy_change(&probs, 0, 1.0, 0.1);
        let h = entropy(&probs);
        let l0 = 0.9f64.ln() + h;
        let l1 = 0.1f64.ln() + h;
        let expected = -0.1 * (0.9 * l0 - (0.81 * l0 + 0.01 * l1));
        assert!((est - expected).abs() < 1e-15);
        assert!((est + 0.0039550042).abs() < 1e-9, "estimate {est}");

        // Independent oracle: apply the actual logit update and recompute
        // exact entropy; the estimate must agree to first order.
        let logits = [0.9f64.ln(), 0.1f64.ln()];
        let updated = apply_logit_update(&logits, 0, 1.0, 0.1).unwrap();
        let exact = entropy(&softmax(&updated).unwrap()) - h;
        assert!(
            (exact - est).abs() < 5e-5,
            "exact {exact} vs estimate {est}"
        );
    }

    #[test]
    fn instability_is_absolute_value() {
        assert_eq!(instability_indicator(0.0), 0.0);
        assert_eq!(instability_indicator(-0.0039550), 0.0039550);
        assert_eq!(instability_indicator(0.123), instability_indicator(-0.123));
    }

    #[test]
    fn stabilization_known_values() {
        // At the threshold the sigmoid is 1/2.
        let cfg = ModulationConfig::new(0.2, 10.0, 0.5, 0.1).unwrap();
        let s = stats(0.0, 1.0, 2.0);
        let at_tau = stabilization_factor(0.5 * 2.0, &s, &cfg);
        assert!((at_tau - (0.8 + 0.2 * 0.5)).abs() < 1e-12);

        // lambda_min 0.8, gamma 10, tau 0.5, x 0.3 -> 0.8 + 0.2*sigmoid(2).
        let x = stabilization_factor(0.3 * 2.0, &s, &cfg);
        assert!((x - 0.9761594).abs() < 1e-7, "got {x}");

        // Sharp sigmoid saturates to the floor above the threshold.
        let sharp = ModulationConfig::new(0.2, 1e4, 0.5, 0.1).unwrap();
        let sat = stabilization_factor(2.0, &s, &sharp);
        assert!((sat - 0.8).abs() < 1e-9);
    }

    #[test]
    fn stabilization_degenerate_batch_uses_zero() {
        let cfg = ModulationConfig::default();
        let s = stats(0.0, 1.0, 0.0);
        let f0 = stabilization_factor(0.0, &s, &cfg);
        let expected =
            cfg.lambda_min() + (1.0 - cfg.lambda_min()) * sigmoid(-cfg.gamma * (0.0 - cfg.tau));
        assert!((f0 - expected).abs() < 1e-15);
    }

    #[test]
    fn modulate_products() {
        assert!((modulate_advantage(1.0, 1.2, 0.9) - 1.08).abs() < 1e-15);
        assert_eq!(modulate_advantage(-2.5, 1.0, 1.0), -2.5);
        assert!((modulate_advantage(-1.0, 1.0, 0.85) + 0.85).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_reduces_to_identity() {
        let cfg = ModulationConfig::new(0.0, 10.0, 0.5, 0.1).unwrap();
        let s = stats(0.1, 2.0, 0.7);
        for h in [0.1, 0.9, 2.0] {
            assert_eq!(compensation_factor(1.0, h, &s, cfg.alpha), 1.0);
        }
        for inst in [0.0, 0.3, 0.7] {
            assert_eq!(stabilization_factor(inst, &s, &cfg), 1.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModulationConfig::new(1.0, 10.0, 0.5, 0.1).is_err());
        assert!(ModulationConfig::new(-0.1, 10.0, 0.5, 0.1).is_err());
        assert!(ModulationConfig::new(0.2, 0.0, 0.5, 0.1).is_err());
        assert!(ModulationConfig::new(0.2, 10.0, 1.5, 0.1).is_err());
        assert!(ModulationConfig::new(0.2, 10.0, 0.5, 0.0).is_err());
        let cfg = ModulationConfig::new(0.3, 5.0, 0.4, 0.01).unwrap();
        assert!((cfg.lambda_min() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn batch_stats_reduction() {
        let stats =
            BatchEntropyStats::from_tokens(vec![(1.0, 0.2), (0.3, 0.5), (2.0, 0.1)]).unwrap();
        assert_eq!(stats.h_min, 0.3);
        assert_eq!(stats.h_max, 2.0);
        assert_eq!(stats.max_instability, 0.5);
        assert!(BatchEntropyStats::from_tokens(Vec::new()).is_none());
    }

    fn arb_probs() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 2..16).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
    }

    proptest! {
        #[test]
        fn factors_bound_the_modulated_advantage(
            advantage in -3.0f64..3.0,
            h in 0.0f64..3.0,
            inst in 0.0f64..1.0,
            alpha in 0.0f64..0.99,
        ) {
            let cfg = ModulationConfig::new(alpha, 10.0, 0.5, 0.1).unwrap();
            let s = stats(0.0, 3.0, 1.0);
            let bc = compensation_factor(advantage, h, &s, alpha);
            let bs = stabilization_factor(inst, &s, &cfg);
            let out = modulate_advantage(advantage, bc, bs);
            prop_assert!(out.abs() <= (1.0 + alpha) * advantage.abs() + 1e-12);
            prop_assert!(out.abs() >= (1.0 - alpha) * advantage.abs() - 1e-12);
            prop_assert_eq!(out.signum(), advantage.signum());
        }

        #[test]
        fn comp_decreases_in_entropy_and_stab_in_instability(
            alpha in 0.01f64..0.99,
            h_pair in (0.0f64..2.0, 0.0f64..2.0),
            i_pair in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let cfg = ModulationConfig::new(alpha, 10.0, 0.5, 0.1).unwrap();
            let s = stats(0.0, 2.0, 1.0);
            let (h_lo, h_hi) = if h_pair.0 <= h_pair.1 { h_pair } else { (h_pair.1, h_pair.0) };
            prop_assert!(
                compensation_factor(1.0, h_lo, &s, alpha)
                    >= compensation_factor(1.0, h_hi, &s, alpha)
            );
            let (i_lo, i_hi) = if i_pair.0 <= i_pair.1 { i_pair } else { (i_pair.1, i_pair.0) };
            prop_assert!(
                stabilization_factor(i_lo, &s, &cfg) >= stabilization_factor(i_hi, &s, &cfg)
            );
        }

        #[test]
        fn enumeration_matches_factorized_form(probs in arb_probs(), seed_xis in prop::collection::vec(-2.0f64..2.0, 16)) {
            // Coefficients are centered under the policy, mirroring the
            // zero-mean property of group-normalized advantages.
            let v = probs.len();
            let mut xis: Vec<f64> = seed_xis.into_iter().take(v).collect();
            while xis.len() < v {
                xis.push(0.0);
            }
            let mean: f64 = probs.iter().zip(&xis).map(|(p, x)| p * x).sum();
            for x in &mut xis {
                *x -= mean;
            }
            let lr = 0.05;
            let expectation: f64 = (0..v)
                .map(|a| probs[a] * estimate_entropy_change(&probs, a, xis[a], lr))
                .sum();
            let factorized = factorized_entropy_change(&probs, &xis, lr);
            prop_assert!(
                (expectation - factorized).abs() < 1e-12,
                "expectation {} vs factorized {}",
                expectation,
                factorized
            );
        }
    }

    #[test]
    fn estimate_error_scales_quadratically_in_lr() {
        // Halving the learning rate should quarter the first-order error.
        let logits = [0.4, -0.3, 1.2, 0.0];
        let probs = softmax(&logits).unwrap();
        let xi = 1.3;
        let action = 2;
        let mut ratios = Vec::new();
        for lr in [1e-2, 5e-3] {
            let est = estimate_entropy_change(&probs, action, xi, lr);
            let updated = apply_logit_update(&logits, action, xi, lr).unwrap();
            let exact = entropy(&softmax(&updated).unwrap()) - entropy(&probs);
            ratios.push((exact - est).abs());
        }
        let ratio = ratios[0] / ratios[1];
        assert!(
            (3.5..=4.5).contains(&ratio),
            "error ratio {ratio} outside [3.5, 4.5]"
        );
    }
}
