//! Tabular softmax policy and its distribution-level identities.
//!
//! A [`PolicyTable`] keeps one logit vector per visited state; states never
//! seen default to all-zero logits, i.e. a uniform next-token distribution.
//! The free functions implement the quantities the rest of the crate builds
//! on: softmax probabilities, Shannon entropy (nats), collision probability
//! `sum p^2`, the score gradient `d log pi_a / dz = e_a - pi`, the centered
//! log-probability `log pi(a) + H`, and the per-token logit update
//!
//! ```text
//! dz_a  = lr * xi * (1 - pi_a)        (sampled action)
//! dz_a' = -lr * xi * pi_a'            (all other actions)
//! ```
//!
//! Averaged over the sampled action, that update vector is zero in every
//! coordinate; its expected squared norm factors as
//! `lr^2 xi^2 (1 - sum p^2)` when the coefficient is treated as independent
//! of the per-token distribution (sequence-level advantages make this a
//! stated assumption, not a verified fact).
//!
//! Entropy uses the natural log throughout so the Jensen bound
//! `sum p^2 >= exp(-H)` holds as written.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ProblemId;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("logits must be finite, got {0}")]
    NonFiniteLogit(f64),
    #[error("empty logit vector")]
    EmptyLogits,
    #[error("action {action} out of range for vocab size {vocab}")]
    ActionOutOfRange { action: usize, vocab: usize },
    #[error("log of zero probability at action {action}")]
    ZeroProbability { action: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
    #[error("logit vector for state {state} has length {got}, expected {expected}")]
    WrongArity {
        state: String,
        got: usize,
        expected: usize,
    },
}

/// Numerically stable softmax (max-subtraction). Sums to 1 within 1e-12.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if logits.is_empty() {
        return Err(PolicyError::EmptyLogits);
    }
    let mut max = f64::NEG_INFINITY;
    for z in logits {
        if !z.is_finite() {
            return Err(PolicyError::NonFiniteLogit(*z));
        }
        max = max.max(*z);
    }
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy in nats, with the `0 * log 0 = 0` convention.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Probability that two independent samples coincide: `sum p^2`.
/// Ranges from `1/V` (uniform) to 1 (deterministic).
pub fn collision_probability(probs: &[f64]) -> f64 {
    probs.iter().map(|p| p * p).sum()
}

/// Gradient of `log pi(action)` with respect to the logits: one-hot at
/// `action` minus the probability vector. Components sum to zero.
pub fn score_gradient(probs: &[f64], action: usize) -> Result<Vec<f64>, PolicyError> {
    if action >= probs.len() {
        return Err(PolicyError::ActionOutOfRange {
            action,
            vocab: probs.len(),
        });
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, p)| if i == action { 1.0 - p } else { -p })
        .collect())
}

/// Expected squared score-gradient norm over sampled actions, which
/// collapses to `1 - sum p^2`.
pub fn expected_grad_norm_sq(probs: &[f64]) -> f64 {
    1.0 - collision_probability(probs)
}

/// Centered log-probability `log pi(action) + H(pi)`: the deviation of the
/// action's log-probability from the distribution's mean log-probability.
/// Zero-probability actions have no defined value.
pub fn centered_log_prob(probs: &[f64], action: usize) -> Result<f64, PolicyError> {
    if action >= probs.len() {
        return Err(PolicyError::ActionOutOfRange {
            action,
            vocab: probs.len(),
        });
    }
    if probs[action] <= 0.0 {
        return Err(PolicyError::ZeroProbability { action });
    }
    Ok(probs[action].ln() + entropy(probs))
}

/// Applies the per-token logit update for a sampled action with composite
/// coefficient `xi` and learning rate `lr`, returning the new logits.
pub fn apply_logit_update(
    logits: &[f64],
    action: usize,
    xi: f64,
    lr: f64,
) -> Result<Vec<f64>, PolicyError> {
    if action >= logits.len() {
        return Err(PolicyError::ActionOutOfRange {
            action,
            vocab: logits.len(),
        });
    }
    if !xi.is_finite() || !lr.is_finite() {
        return Err(PolicyError::NonFiniteLogit(if xi.is_finite() {
            lr
        } else {
            xi
        }));
    }
    let probs = softmax(logits)?;
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, z)| {
            if i == action {
                z + lr * xi * (1.0 - probs[i])
            } else {
                z - lr * xi * probs[i]
            }
        })
        .collect())
}

/// Exact squared norm of the delta produced by [`apply_logit_update`]:
/// `lr^2 * xi^2 * (1 - 2 p_action + sum p^2)`. Vanishes for fully confident
/// sampled actions, confirming gradient attenuation.
pub fn update_magnitude_sq(
    probs: &[f64],
    action: usize,
    xi: f64,
    lr: f64,
) -> Result<f64, PolicyError> {
    if action >= probs.len() {
        return Err(PolicyError::ActionOutOfRange {
            action,
            vocab: probs.len(),
        });
    }
    let collision = collision_probability(probs);
    Ok(lr * lr * xi * xi * (1.0 - 2.0 * probs[action] + collision))
}

/// Canonical state key: the problem id followed by the token prefix joined
/// by `-`, separated by a colon. Token strings never contain colons, so the
/// encoding is injective (split on the last colon to recover the parts).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(String);

impl StateKey {
    pub fn new(problem_id: &ProblemId, prefix: &[usize]) -> Self {
        let tokens: Vec<String> = prefix.iter().map(|t| t.to_string()).collect();
        StateKey(format!("{}:{}", problem_id, tokens.join("-")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for StateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Probabilities plus the derived scalars most callers need together.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub probs: Vec<f64>,
    pub entropy: f64,
    pub collision: f64,
}

impl DistributionStats {
    pub fn from_logits(logits: &[f64]) -> Result<Self, PolicyError> {
        let probs = softmax(logits)?;
        Ok(Self::from_valid_probs(probs))
    }

    /// Validates the vector (entries in [0,1], sum within 1e-12 of 1) and
    /// computes entropy and collision probability.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, PolicyError> {
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(PolicyError::InvalidProbs(format!("sum {sum}")));
        }
        for p in &probs {
            if !(0.0..=1.0).contains(p) {
                return Err(PolicyError::InvalidProbs(format!("entry {p}")));
            }
        }
        Ok(Self::from_valid_probs(probs))
    }

    fn from_valid_probs(probs: Vec<f64>) -> Self {
        let entropy = entropy(&probs);
        let collision = collision_probability(&probs);
        DistributionStats {
            probs,
            entropy,
            collision,
        }
    }
}

/// Tabular softmax policy: one logit vector per state. Serializes as
/// `{"vocab_size": V, "logits": {"<state-key>": [..]}}`.
///
/// Mutation is single-writer: take `&mut` for the update phase, share
/// read-only references between updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    vocab_size: usize,
    logits: BTreeMap<StateKey, Vec<f64>>,
}

impl PolicyTable {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size >= 1, "vocab_size must be positive");
        PolicyTable {
            vocab_size,
            logits: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Logits for a state; absent states are all-zero (uniform policy).
    pub fn logits(&self, key: &StateKey) -> Vec<f64> {
        self.logits
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab_size])
    }

    pub fn stored_states(&self) -> impl Iterator<Item = (&StateKey, &Vec<f64>)> {
        self.logits.iter()
    }

    pub fn num_stored_states(&self) -> usize {
        self.logits.len()
    }

    pub fn distribution(&self, key: &StateKey) -> DistributionStats {
        match self.logits.get(key) {
            // Stored logits are validated finite, so softmax cannot fail.
            Some(z) => DistributionStats::from_logits(z).expect("stored logits are finite"),
            None => {
                let p = 1.0 / self.vocab_size as f64;
                DistributionStats::from_valid_probs(vec![p; self.vocab_size])
            }
        }
    }

    pub fn set_logits(&mut self, key: StateKey, logits: Vec<f64>) -> Result<(), PolicyError> {
        if logits.len() != self.vocab_size {
            return Err(PolicyError::WrongArity {
                state: key.to_string(),
                got: logits.len(),
                expected: self.vocab_size,
            });
        }
        for z in &logits {
            if !z.is_finite() {
                return Err(PolicyError::NonFiniteLogit(*z));
            }
        }
        self.logits.insert(key, logits);
        Ok(())
    }

    /// Adds a delta vector to a state's logits (materializing zeros first
    /// for unseen states). Rejects non-finite results.
    pub fn add_delta(&mut self, key: &StateKey, delta: &[f64]) -> Result<(), PolicyError> {
        if delta.len() != self.vocab_size {
            return Err(PolicyError::WrongArity {
                state: key.to_string(),
                got: delta.len(),
                expected: self.vocab_size,
            });
        }
        let entry = self
            .logits
            .entry(key.clone())
            .or_insert_with(|| vec![0.0; self.vocab_size]);
        for (z, d) in entry.iter_mut().zip(delta) {
            let next = *z + d;
            if !next.is_finite() {
                return Err(PolicyError::NonFiniteLogit(next));
            }
            *z = next;
        }
        Ok(())
    }

    /// Applies the sampled-action logit update in place.
    pub fn apply_update(
        &mut self,
        key: &StateKey,
        action: usize,
        xi: f64,
        lr: f64,
    ) -> Result<(), PolicyError> {
        let current = self.logits(key);
        let updated = apply_logit_update(&current, action, xi, lr)?;
        self.set_logits(key.clone(), updated)
    }

    /// Validates a deserialized table (finite logits, consistent arity).
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (key, z) in &self.logits {
            if z.len() != self.vocab_size {
                return Err(PolicyError::WrongArity {
                    state: key.to_string(),
                    got: z.len(),
                    expected: self.vocab_size,
                });
            }
            for v in z {
                if !v.is_finite() {
                    return Err(PolicyError::NonFiniteLogit(*v));
                }
            }
        }
        Ok(())
    }
}
