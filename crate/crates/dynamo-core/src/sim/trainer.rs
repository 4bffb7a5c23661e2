//! The synthetic training loop.
//!
//! Each step: allocate the rollout budget (water-level from accumulated
//! history, or uniform when DRA is ablated), sample rollouts, update
//! histories, normalize advantages per group, build token traces with
//! ratios/gates/coefficients, estimate per-token entropy changes, apply the
//! compensation/stabilization factors per the ablation switches, then take
//! one accumulated gradient step on every touched state's logits.
//!
//! The gradient for a batch is evaluated at the pre-update policy and
//! applied once (per inner epoch), so with a single epoch the importance
//! ratios are exactly 1 and nothing clips. Extra inner epochs reuse the
//! sampled rollouts with refreshed ratios, exercising the clip gate.

use std::collections::{BTreeMap, HashMap};

use crate::allocator::{uniform_allocate, water_level_allocate, AllocationPlan};
use crate::grpo::{
    clip_gate, composite_coefficient, group_advantage_with_mode, importance_ratio,
    surrogate_objective, RolloutGroup, TokenUpdateRecord,
};
use crate::modulation::{
    compensation_factor, estimate_entropy_change, instability_indicator, modulate_advantage,
    stabilization_factor, BatchEntropyStats, ModulationConfig,
};
use crate::policy::{entropy, DistributionStats, PolicyTable, StateKey};
use crate::sim::config::SimConfig;
use crate::sim::metrics::{RunSummary, StepMetrics, TraceRow, TrainingMetrics};
use crate::sim::problems::{ProblemBank, ProblemSpec};
use crate::sim::rng::{bank_rng, rollout_rng};
use crate::sim::rollouts::generate_rollouts;
use crate::sim::SimError;
use crate::stats::{snapshot_priorities_with_min, HistoryRecord};
use crate::ProblemId;

/// Exact probability that one rollout of `problem` succeeds under `policy`:
/// the summed path probabilities of all target sequences.
pub fn policy_success_probability(policy: &PolicyTable, problem: &ProblemSpec) -> f64 {
    problem
        .targets
        .iter()
        .map(|target| {
            let mut p = 1.0;
            for t in 0..target.len() {
                let key = StateKey::new(&problem.problem_id, &target[..t]);
                p *= policy.distribution(&key).probs[target[t]];
            }
            p
        })
        .sum()
}

struct TokenWork {
    group_idx: usize,
    state_key: StateKey,
    action: usize,
    advantage: f64,
    ratio: f64,
    gate: bool,
    xi_raw: f64,
    entropy: f64,
    instability: f64,
    delta_h: f64,
}

/// Full trainer state for one run.
pub struct Trainer {
    config: SimConfig,
    modulation_cfg: ModulationConfig,
    bank: ProblemBank,
    policy: PolicyTable,
    history: BTreeMap<ProblemId, HistoryRecord>,
    step_index: usize,
    token_counter: u64,
    trace: Vec<TraceRow>,
}

impl Trainer {
    pub fn new(config: SimConfig, bank: ProblemBank) -> Result<Self, SimError> {
        config.validate()?;
        bank.validate()?;
        if bank.vocab_size != config.vocab_size
            || bank.seq_len != config.seq_len
            || bank.problems.len() != config.n_problems
        {
            return Err(SimError::InvalidBank(format!(
                "bank (V={}, T={}, N={}) does not match config (V={}, T={}, N={})",
                bank.vocab_size,
                bank.seq_len,
                bank.problems.len(),
                config.vocab_size,
                config.seq_len,
                config.n_problems
            )));
        }
        let modulation_cfg = config
            .modulation_config()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let history = bank
            .problems
            .iter()
            .map(|p| {
                (
                    p.problem_id.clone(),
                    HistoryRecord::empty(p.problem_id.clone()),
                )
            })
            .collect();
        Ok(Trainer {
            policy: PolicyTable::new(config.vocab_size),
            modulation_cfg,
            config,
            bank,
            history,
            step_index: 0,
            token_counter: 0,
            trace: Vec::new(),
        })
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    pub fn bank(&self) -> &ProblemBank {
        &self.bank
    }

    pub fn history(&self) -> &BTreeMap<ProblemId, HistoryRecord> {
        &self.history
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        std::mem::take(&mut self.trace)
    }

    pub fn mean_policy_success(&self) -> f64 {
        let total: f64 = self
            .bank
            .problems
            .iter()
            .map(|p| policy_success_probability(&self.policy, p))
            .sum();
        total / self.bank.problems.len() as f64
    }

    fn allocate(&self) -> Result<AllocationPlan, SimError> {
        let alloc_cfg = self.config.allocation_config(self.bank.problems.len());
        if self.config.ablation.dra {
            let snapshot =
                snapshot_priorities_with_min(self.history.values(), self.config.min_history);
            Ok(water_level_allocate(&snapshot, &alloc_cfg)?)
        } else {
            let ids: Vec<ProblemId> = self
                .bank
                .problems
                .iter()
                .map(|p| p.problem_id.clone())
                .collect();
            Ok(uniform_allocate(&ids, &alloc_cfg)?)
        }
    }

    /// Runs one training step and returns its metric record.
    pub fn step(&mut self) -> Result<StepMetrics, SimError> {
        let step = self.step_index;
        let plan = self.allocate()?;

        // Rollout generation, one derived rng stream per (step, problem).
        let mut groups: Vec<RolloutGroup> = Vec::with_capacity(self.bank.problems.len());
        for (idx, problem) in self.bank.problems.iter().enumerate() {
            let n = plan
                .allocations
                .get(&problem.problem_id)
                .copied()
                .expect("plan covers every problem");
            let mut rng = rollout_rng(self.config.seed, step as u64, idx as u64);
            groups.push(generate_rollouts(&self.policy, problem, n, &mut rng)?);
        }
        let consumed: u64 = groups.iter().map(|g| g.len() as u64).sum();
        debug_assert_eq!(consumed, plan.consumed);

        // History accumulates this step's outcomes for future allocations.
        for group in &groups {
            let record = self
                .history
                .get_mut(&group.problem_id)
                .expect("history covers every problem");
            *record = record.updated(group.len() as u64, group.successes())?;
        }

        let mut per_epoch_grad_norm = Vec::with_capacity(self.config.inner_epochs);
        let mut clipped_tokens = 0u64;
        let mut stabilized_tokens = 0u64;
        let mut modulation_violations = 0u64;
        let mut surrogate = 0.0;
        let mut mean_entropy = 0.0;
        let alpha = if self.config.ablation.gc {
            self.config.modulation.alpha
        } else {
            0.0
        };

        for epoch in 0..self.config.inner_epochs {
            let mut dist_cache: HashMap<StateKey, DistributionStats> = HashMap::new();
            let mut tokens: Vec<TokenWork> = Vec::new();

            for (group_idx, group) in groups.iter().enumerate() {
                let advantages = group_advantage_with_mode(&group.rewards, self.config.std_mode)?;
                for (resp_idx, (response, old_logps)) in
                    group.responses.iter().zip(&group.old_logprobs).enumerate()
                {
                    let advantage = advantages[resp_idx];
                    for (t, (&action, &old_lp)) in response.iter().zip(old_logps).enumerate() {
                        let key = StateKey::new(&group.problem_id, &response[..t]);
                        let dist = dist_cache
                            .entry(key.clone())
                            .or_insert_with(|| self.policy.distribution(&key));
                        let p = dist.probs[action];
                        if p <= 0.0 {
                            return Err(SimError::NumericAbort {
                                step,
                                context: format!(
                                    "sampled action {action} has zero probability at state {key}"
                                ),
                            });
                        }
                        let ratio = importance_ratio(p.ln(), old_lp);
                        let gate = clip_gate(ratio, advantage, self.config.clip_eps);
                        let xi_raw = composite_coefficient(gate, ratio, advantage);
                        let delta_h = estimate_entropy_change(
                            &dist.probs,
                            action,
                            xi_raw,
                            self.config.learning_rate,
                        );
                        if !delta_h.is_finite() {
                            return Err(SimError::NumericAbort {
                                step,
                                context: format!(
                                    "entropy-change estimate is non-finite at state {key} action {action}"
                                ),
                            });
                        }
                        tokens.push(TokenWork {
                            group_idx,
                            state_key: key,
                            action,
                            advantage,
                            ratio,
                            gate,
                            xi_raw,
                            entropy: dist.entropy,
                            instability: instability_indicator(delta_h),
                            delta_h,
                        });
                    }
                }
            }

            let batch_stats =
                BatchEntropyStats::from_tokens(tokens.iter().map(|t| (t.entropy, t.instability)))
                    .unwrap_or(BatchEntropyStats {
                        h_min: 0.0,
                        h_max: 0.0,
                        max_instability: 0.0,
                    });

            // Second pass: modulation factors, gradient accumulation, and
            // per-prompt records for the surrogate. BTreeMap keeps the
            // accumulation order deterministic.
            let mut delta: BTreeMap<StateKey, Vec<f64>> = BTreeMap::new();
            let mut prompt_records: Vec<Vec<TokenUpdateRecord>> = vec![Vec::new(); groups.len()];

            for token in &tokens {
                let beta_comp =
                    compensation_factor(token.advantage, token.entropy, &batch_stats, alpha);
                let beta_stab = if self.config.ablation.ums {
                    stabilization_factor(token.instability, &batch_stats, &self.modulation_cfg)
                } else {
                    1.0
                };
                let a_final = modulate_advantage(token.advantage, beta_comp, beta_stab);

                if !modulation_within_bounds(token.advantage, a_final, self.config.modulation.alpha)
                {
                    modulation_violations += 1;
                }
                if !token.gate {
                    clipped_tokens += 1;
                }
                if beta_stab < 1.0 - 1e-9 {
                    stabilized_tokens += 1;
                }

                let xi_final = composite_coefficient(token.gate, token.ratio, a_final);
                if self.config.collect_trace {
                    self.trace.push(TraceRow {
                        token_id: self.token_counter,
                        entropy: token.entropy,
                        advantage: token.advantage,
                        xi: token.xi_raw,
                        delta_h_est: token.delta_h,
                        beta_comp,
                        beta_stab,
                        a_final,
                    });
                }
                self.token_counter += 1;

                if xi_final != 0.0 {
                    let dist = &dist_cache[&token.state_key];
                    let dvec = delta
                        .entry(token.state_key.clone())
                        .or_insert_with(|| vec![0.0; self.config.vocab_size]);
                    let scale = self.config.learning_rate * xi_final;
                    for (i, d) in dvec.iter_mut().enumerate() {
                        let indicator = f64::from(i == token.action);
                        *d += scale * (indicator - dist.probs[i]);
                    }
                }

                prompt_records[token.group_idx].push(TokenUpdateRecord {
                    state_key: token.state_key.clone(),
                    action: token.action,
                    advantage: a_final,
                    ratio: token.ratio,
                    clip_active: !token.gate,
                    xi: xi_final,
                    token_entropy: token.entropy,
                });
            }

            if epoch == 0 {
                let mut total = 0.0;
                for records in &prompt_records {
                    total += surrogate_objective(records, self.config.clip_eps)?;
                }
                surrogate = total / groups.len() as f64;
                mean_entropy =
                    tokens.iter().map(|t| t.entropy).sum::<f64>() / tokens.len().max(1) as f64;
            }

            let norm_sq: f64 = delta
                .values()
                .map(|v| v.iter().map(|d| d * d).sum::<f64>())
                .sum();
            per_epoch_grad_norm.push(norm_sq.sqrt());

            for (key, dvec) in &delta {
                self.policy
                    .add_delta(key, dvec)
                    .map_err(|e| SimError::NumericAbort {
                        step,
                        context: format!("logit update at state {key}: {e}"),
                    })?;
            }
        }

        // Post-update success probabilities and per-step bookkeeping.
        let mut empirical_success = BTreeMap::new();
        let mut policy_success = BTreeMap::new();
        for (problem, group) in self.bank.problems.iter().zip(&groups) {
            empirical_success.insert(
                problem.problem_id.clone(),
                group.successes() as f64 / group.len() as f64,
            );
            policy_success.insert(
                problem.problem_id.clone(),
                policy_success_probability(&self.policy, problem),
            );
        }
        let n = self.bank.problems.len() as f64;
        let mean_empirical_success = empirical_success.values().sum::<f64>() / n;
        let mean_policy_success = policy_success.values().sum::<f64>() / n;

        let alloc_values: Vec<f64> = plan
            .allocations
            .values()
            .map(|v| *v as f64 / plan.consumed as f64)
            .collect();
        let allocation_entropy = entropy(&alloc_values);

        let grad_norm = per_epoch_grad_norm.iter().sum::<f64>() / per_epoch_grad_norm.len() as f64;

        let metrics = StepMetrics {
            step,
            consumed_rollouts: consumed,
            grad_norm,
            mean_entropy,
            mean_empirical_success,
            mean_policy_success,
            surrogate,
            clipped_tokens,
            stabilized_tokens,
            modulation_violations,
            allocation_entropy,
            feasibility_scaled: plan.feasibility_scaled,
            allocations: plan.allocations,
            empirical_success,
            policy_success,
        };
        if let Some(field) = metrics.non_finite_field() {
            return Err(SimError::NumericAbort {
                step,
                context: format!("metric {field} is non-finite"),
            });
        }
        self.step_index += 1;
        Ok(metrics)
    }

    /// Runs the configured number of steps.
    pub fn run(&mut self) -> Result<TrainingMetrics, SimError> {
        let mut metrics = TrainingMetrics::default();
        for _ in 0..self.config.steps {
            metrics.steps.push(self.step()?);
        }
        Ok(metrics)
    }
}

fn modulation_within_bounds(advantage: f64, a_final: f64, alpha: f64) -> bool {
    let tol = 1e-12 * advantage.abs().max(1.0);
    let lo = (1.0 - alpha) * advantage.abs() - tol;
    let hi = (1.0 + alpha) * advantage.abs() + tol;
    let magnitude_ok = a_final.abs() >= lo && a_final.abs() <= hi;
    let sign_ok = (advantage == 0.0 && a_final == 0.0)
        || (advantage > 0.0 && a_final > 0.0)
        || (advantage < 0.0 && a_final < 0.0);
    magnitude_ok && sign_ok
}

/// The result of a full run: metrics, summary, final policy, and (when
/// enabled) the per-token modulation trace.
#[derive(Debug)]
pub struct SimOutput {
    pub metrics: TrainingMetrics,
    pub summary: RunSummary,
    pub policy: PolicyTable,
    pub trace: Vec<TraceRow>,
}

/// Runs a full experiment, synthesizing the problem bank from the seed.
pub fn run_experiment(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let bank = ProblemBank::generate(
        config.vocab_size,
        config.seq_len,
        config.n_problems,
        &mut bank_rng(config.seed),
    );
    run_experiment_with_bank(config, bank)
}

/// Runs a full experiment on a supplied problem bank.
pub fn run_experiment_with_bank(
    config: &SimConfig,
    bank: ProblemBank,
) -> Result<SimOutput, SimError> {
    let mut trainer = Trainer::new(config.clone(), bank)?;
    let initial_mean_policy_success = trainer.mean_policy_success();
    let metrics = trainer.run()?;
    let final_mean = metrics
        .steps
        .last()
        .map(|m| m.mean_policy_success)
        .unwrap_or(initial_mean_policy_success);
    let (final_policy_success, final_empirical_success) = metrics
        .steps
        .last()
        .map(|m| (m.policy_success.clone(), m.empirical_success.clone()))
        .unwrap_or_default();
    let summary = RunSummary {
        seed: config.seed,
        steps_completed: metrics.steps.len(),
        initial_mean_policy_success,
        final_mean_policy_success: final_mean,
        final_policy_success,
        final_empirical_success,
        config: config.clone(),
    };
    let trace = trainer.take_trace();
    Ok(SimOutput {
        metrics,
        summary,
        policy: trainer.policy().clone(),
        trace,
    })
}
