//! Rollout sampling from the tabular policy, and the Monte Carlo
//! gradient-variance estimator used to sanity-check allocation priorities.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grpo::{group_advantage, RolloutGroup};
use crate::policy::{PolicyTable, StateKey};
use crate::sim::problems::ProblemSpec;
use crate::sim::SimError;

/// Inverse-CDF draw from a probability vector. `u` must lie in [0, 1).
pub fn sample_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples `n` responses token by token (temperature 1, full distribution),
/// recording sampling-time log-probabilities and binary rewards by exact
/// target-set membership. Fixed rng state gives a bit-identical group.
pub fn generate_rollouts(
    policy: &PolicyTable,
    problem: &ProblemSpec,
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutGroup, SimError> {
    if n < 2 {
        return Err(SimError::GroupTooSmall(n));
    }
    let seq_len = problem.targets.iter().next().map(|t| t.len()).unwrap_or(0);
    let mut responses = Vec::with_capacity(n as usize);
    let mut rewards = Vec::with_capacity(n as usize);
    let mut old_logprobs = Vec::with_capacity(n as usize);
    let mut dist_cache: HashMap<StateKey, Vec<f64>> = HashMap::new();

    for _ in 0..n {
        let mut tokens: Vec<usize> = Vec::with_capacity(seq_len);
        let mut logps: Vec<f64> = Vec::with_capacity(seq_len);
        for t in 0..seq_len {
            let key = StateKey::new(&problem.problem_id, &tokens[..t]);
            let probs = dist_cache
                .entry(key.clone())
                .or_insert_with(|| policy.distribution(&key).probs);
            let u: f64 = rng.gen();
            let action = sample_action(probs, u);
            logps.push(probs[action].ln());
            tokens.push(action);
        }
        rewards.push(u8::from(problem.contains(&tokens)));
        responses.push(tokens);
        old_logprobs.push(logps);
    }

    Ok(RolloutGroup {
        problem_id: problem.problem_id.clone(),
        responses,
        rewards,
        old_logprobs,
    })
}

/// Monte Carlo estimate of the expected squared norm of the single-group
/// gradient estimator `g = (1/G) sum_j A_j * grad log pi(o_j)`, averaged
/// over `n_samples` freshly sampled groups of size `group_size`.
///
/// Balanced problems (success rate near 1/2) produce markedly larger values
/// than nearly-always-solved or nearly-never-solved ones, which is exactly
/// the signal the Bernoulli priority stands in for.
pub fn empirical_gradient_variance(
    policy: &PolicyTable,
    problem: &ProblemSpec,
    group_size: u64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SimError> {
    if n_samples < 100 {
        return Err(SimError::TooFewSamples(n_samples));
    }
    let vocab = policy.vocab_size();
    let mut dist_cache: HashMap<StateKey, Vec<f64>> = HashMap::new();
    let mut acc = 0.0;

    for _ in 0..n_samples {
        let group = generate_rollouts(policy, problem, group_size, rng)?;
        let advantages = group_advantage(&group.rewards)?;
        let mut grad: HashMap<StateKey, Vec<f64>> = HashMap::new();
        for (response, advantage) in group.responses.iter().zip(&advantages) {
            if *advantage == 0.0 {
                continue;
            }
            let weight = advantage / group_size as f64;
            for t in 0..response.len() {
                let key = StateKey::new(&problem.problem_id, &response[..t]);
                let probs = dist_cache
                    .entry(key.clone())
                    .or_insert_with(|| policy.distribution(&key).probs)
                    .clone();
                let entry = grad.entry(key).or_insert_with(|| vec![0.0; vocab]);
                for (i, p) in probs.iter().enumerate() {
                    let indicator = f64::from(i == response[t]);
                    entry[i] += weight * (indicator - p);
                }
            }
        }
        acc += grad
            .values()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>();
    }
    Ok(acc / n_samples as f64)
}
