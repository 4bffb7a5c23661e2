//! Rollout budget allocation.
//!
//! Three layers:
//!
//! 1. The continuous variance-minimizing optimum `n_i = B * s_i / sum(s)`
//!    for per-problem gradient standard deviations `s_i`, together with the
//!    variance-reduction ratio `(sum s)^2 / (N * sum s^2)` it achieves over
//!    uniform allocation.
//! 2. The integer water-level allocator: proportional shares driven by the
//!    Bernoulli priorities from [`crate::stats`], iterated under per-problem
//!    `[min, max]` bounds until the budget is exhausted.
//! 3. Fallbacks: proportional scaling of the minimum when the budget cannot
//!    cover it, a uniform slice for problems with insufficient history, and
//!    a uniform split when every priority is zero.
//!
//! The integer allocator consumes the budget exactly whenever
//! `N*min <= B <= N*max`; above `N*max` every problem caps out and the plan
//! reports the shortfall via `consumed`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::PrioritySnapshot;
use crate::ProblemId;

#[derive(Debug, Error, PartialEq)]
pub enum AllocatorError {
    #[error("min_per_problem {min} exceeds max_per_problem {max}")]
    InfeasibleBounds { min: u64, max: u64 },
    #[error("min_per_problem must be positive")]
    ZeroMin,
    #[error("snapshot contains no problems")]
    EmptySnapshot,
    #[error("problem {0} appears both with a priority and as insufficient")]
    OverlappingId(ProblemId),
    #[error("priority for {id} is {value}, expected a finite non-negative number")]
    InvalidPriority { id: ProblemId, value: f64 },
    #[error("all sigmas are zero; caller should fall back to a uniform split")]
    DegenerateSigmas,
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

/// Budget and per-problem bounds for one allocation round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub total_budget: u64,
    pub min_per_problem: u64,
    pub max_per_problem: u64,
}

impl AllocationConfig {
    pub fn new(
        total_budget: u64,
        min_per_problem: u64,
        max_per_problem: u64,
    ) -> Result<Self, AllocatorError> {
        let config = AllocationConfig {
            total_budget,
            min_per_problem,
            max_per_problem,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AllocatorError> {
        if self.min_per_problem == 0 {
            return Err(AllocatorError::ZeroMin);
        }
        if self.min_per_problem > self.max_per_problem {
            return Err(AllocatorError::InfeasibleBounds {
                min: self.min_per_problem,
                max: self.max_per_problem,
            });
        }
        Ok(())
    }
}

/// Integer rollout budget per problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub allocations: BTreeMap<ProblemId, u64>,
    pub consumed: u64,
    pub feasibility_scaled: bool,
}

impl AllocationPlan {
    pub fn get(&self, id: &ProblemId) -> Option<u64> {
        self.allocations.get(id).copied()
    }
}

/// Continuous variance-minimizing allocation `B * s_i / sum(s)`.
///
/// Components sum to `budget`; zero-sigma problems receive zero. When every
/// sigma is zero the optimum is undefined and the caller should split
/// uniformly instead.
pub fn optimal_continuous_allocation(
    sigmas: &[f64],
    budget: f64,
) -> Result<Vec<f64>, AllocatorError> {
    if !budget.is_finite() || budget < 0.0 {
        return Err(AllocatorError::NonFinite(format!("budget {budget}")));
    }
    let sum = checked_sigma_sum(sigmas)?;
    Ok(sigmas.iter().map(|s| budget * s / sum).collect())
}

/// Ratio of optimally-allocated to uniformly-allocated total variance:
/// `(sum s)^2 / (N * sum s^2)`. Lies in (0, 1], with 1 exactly when all
/// sigmas are equal (Cauchy-Schwarz equality case).
pub fn variance_ratio(sigmas: &[f64]) -> Result<f64, AllocatorError> {
    let sum = checked_sigma_sum(sigmas)?;
    let sum_sq: f64 = sigmas.iter().map(|s| s * s).sum();
    Ok(sum * sum / (sigmas.len() as f64 * sum_sq))
}

/// Total estimator variance `sum s_i^2 / n_i` under a given allocation.
/// Zero-sigma problems contribute nothing regardless of their allocation;
/// a positive-sigma problem with zero rollouts yields infinity.
pub fn total_variance(sigmas: &[f64], allocations: &[f64]) -> f64 {
    assert_eq!(sigmas.len(), allocations.len(), "length mismatch");
    sigmas
        .iter()
        .zip(allocations)
        .map(|(s, n)| {
            if *s == 0.0 {
                0.0
            } else if *n <= 0.0 {
                f64::INFINITY
            } else {
                s * s / n
            }
        })
        .sum()
}

fn checked_sigma_sum(sigmas: &[f64]) -> Result<f64, AllocatorError> {
    if sigmas.is_empty() {
        return Err(AllocatorError::EmptySnapshot);
    }
    for s in sigmas {
        if !s.is_finite() || *s < 0.0 {
            return Err(AllocatorError::NonFinite(format!("sigma {s}")));
        }
    }
    let sum: f64 = sigmas.iter().sum();
    if sum <= 0.0 {
        return Err(AllocatorError::DegenerateSigmas);
    }
    Ok(sum)
}

/// Effective per-problem minimum: the configured minimum when affordable,
/// otherwise `floor(B / N)` so that N problems never pre-commit more than
/// the budget. A zero result means some problems may receive no rollouts.
pub fn feasibility_scale(n_problems: usize, config: &AllocationConfig) -> u64 {
    assert!(
        n_problems >= 1,
        "feasibility_scale requires at least one problem"
    );
    let n = n_problems as u128;
    if n * config.min_per_problem as u128 <= config.total_budget as u128 {
        config.min_per_problem
    } else {
        config.total_budget / n_problems as u64
    }
}

/// Water-level allocation driven by Bernoulli priorities.
///
/// Every problem starts at the effective minimum. Proportional passes then
/// hand each eligible problem `floor(B_rem * P_i / sum_eligible P)` (with
/// `B_rem` decremented live, iterating in descending priority order, ties by
/// ascending id), capped at `max_per_problem`. Once a full pass allocates
/// nothing, the remainder is distributed one rollout at a time: first over
/// positive-priority problems in the same order, then zero-priority ones,
/// then insufficient-history ones.
///
/// Problems in the snapshot's insufficient set bypass the proportional pool
/// and instead receive a uniform slice of `floor(B * count / N)` total,
/// clamped to the bounds. If no problem has a positive priority the whole
/// budget is split uniformly.
pub fn water_level_allocate(
    snapshot: &PrioritySnapshot,
    config: &AllocationConfig,
) -> Result<AllocationPlan, AllocatorError> {
    config.validate()?;
    if snapshot.is_empty() {
        return Err(AllocatorError::EmptySnapshot);
    }
    for id in &snapshot.insufficient {
        if snapshot.priorities.contains_key(id) {
            return Err(AllocatorError::OverlappingId(id.clone()));
        }
    }
    for (id, p) in &snapshot.priorities {
        if !p.is_finite() || *p < 0.0 {
            return Err(AllocatorError::InvalidPriority {
                id: id.clone(),
                value: *p,
            });
        }
    }

    let n = snapshot.len() as u64;
    let budget = config.total_budget;
    let g_max = config.max_per_problem;

    let all_ids: Vec<&ProblemId> = snapshot
        .priorities
        .keys()
        .chain(snapshot.insufficient.iter())
        .collect();

    // Budget at or above N*max saturates every problem; the surplus cannot
    // be placed without violating the upper bound.
    if budget as u128 >= n as u128 * g_max as u128 {
        let allocations: BTreeMap<ProblemId, u64> =
            all_ids.iter().map(|id| ((*id).clone(), g_max)).collect();
        return Ok(AllocationPlan {
            allocations,
            consumed: n * g_max,
            feasibility_scaled: false,
        });
    }

    let eff_min = feasibility_scale(snapshot.len(), config);
    let feasibility_scaled = eff_min < config.min_per_problem;

    // Dense working arrays: entries 0..n_pri are the priority pool (already
    // ascending by id from the BTreeMap), the rest the insufficient set.
    let n_pri = snapshot.priorities.len();
    let priorities: Vec<f64> = snapshot.priorities.values().copied().collect();
    let mut alloc = vec![eff_min; all_ids.len()];
    let mut b_rem = budget - n * eff_min;

    // Descending priority; index order breaks ties by ascending problem id.
    let mut order: Vec<usize> = (0..n_pri).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));

    let has_positive = order.first().is_some_and(|&i| priorities[i] > 0.0);

    if !has_positive {
        // Near-deterministic batch: uniform split over everything.
        let mut by_id: Vec<usize> = (0..all_ids.len()).collect();
        by_id.sort_by_key(|&i| all_ids[i]);
        b_rem -= distribute_uniform(&mut alloc, &by_id, b_rem, g_max);
        debug_assert_eq!(b_rem, 0);
        return Ok(finish_plan(
            &all_ids,
            alloc,
            budget - b_rem,
            feasibility_scaled,
        ));
    }

    // Uniform slice for insufficient-history problems: floor(B * count / N)
    // in total, realized as a top-up above the shared minimum.
    let insufficient: Vec<usize> = (n_pri..all_ids.len()).collect();
    if !insufficient.is_empty() {
        let s = insufficient.len() as u64;
        let slice = (budget as u128 * s as u128 / n as u128) as u64;
        let top_up = slice.saturating_sub(s * eff_min).min(b_rem);
        b_rem -= distribute_uniform(&mut alloc, &insufficient, top_up, g_max);
    }

    // Proportional water-level passes over the priority pool.
    loop {
        if b_rem == 0 {
            break;
        }
        let eligible: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| alloc[i] < g_max)
            .collect();
        if eligible.is_empty() {
            break;
        }
        let sum_p: f64 = eligible.iter().map(|&i| priorities[i]).sum();
        if sum_p <= 0.0 {
            // Only zero-priority problems left; proportional shares are all
            // zero, so fall through to the one-at-a-time remainder rule.
            break;
        }
        let mut pass_total = 0u64;
        for &i in &eligible {
            if b_rem == 0 {
                break;
            }
            let share = ((b_rem as f64) * priorities[i] / sum_p).floor() as u64;
            let dg = share.min(g_max - alloc[i]).min(b_rem);
            if dg > 0 {
                alloc[i] += dg;
                b_rem -= dg;
                pass_total += dg;
            }
        }
        if pass_total == 0 {
            break;
        }
    }

    // Remainder rule: one rollout at a time in descending priority order.
    // Zero-priority problems join only once every positive-priority problem
    // is capped; insufficient ones only once the whole pool is capped.
    if b_rem > 0 {
        let positive: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| priorities[i] > 0.0)
            .collect();
        b_rem -= round_robin(&mut alloc, &positive, b_rem, g_max);
    }
    if b_rem > 0 {
        let zero: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| priorities[i] == 0.0)
            .collect();
        b_rem -= round_robin(&mut alloc, &zero, b_rem, g_max);
    }
    if b_rem > 0 {
        b_rem -= round_robin(&mut alloc, &insufficient, b_rem, g_max);
    }

    debug_assert_eq!(b_rem, 0, "budget below N*max must be consumed exactly");
    Ok(finish_plan(
        &all_ids,
        alloc,
        budget - b_rem,
        feasibility_scaled,
    ))
}

fn finish_plan(
    ids: &[&ProblemId],
    alloc: Vec<u64>,
    consumed: u64,
    feasibility_scaled: bool,
) -> AllocationPlan {
    let allocations: BTreeMap<ProblemId, u64> = ids
        .iter()
        .zip(alloc)
        .map(|(id, v)| ((*id).clone(), v))
        .collect();
    AllocationPlan {
        allocations,
        consumed,
        feasibility_scaled,
    }
}

/// Uniform split of `budget` rollouts over `ids`, honoring the same bounds
/// and exactness guarantees as the water-level path. Used for the baseline
/// arm and for batches without any usable priority signal.
pub fn uniform_allocate(
    ids: &[ProblemId],
    config: &AllocationConfig,
) -> Result<AllocationPlan, AllocatorError> {
    config.validate()?;
    if ids.is_empty() {
        return Err(AllocatorError::EmptySnapshot);
    }
    let n = ids.len() as u64;
    let budget = config.total_budget;
    let g_max = config.max_per_problem;

    if budget as u128 >= n as u128 * g_max as u128 {
        let allocations: BTreeMap<ProblemId, u64> =
            ids.iter().map(|id| (id.clone(), g_max)).collect();
        return Ok(AllocationPlan {
            allocations,
            consumed: n * g_max,
            feasibility_scaled: false,
        });
    }

    let eff_min = feasibility_scale(ids.len(), config);
    let feasibility_scaled = eff_min < config.min_per_problem;
    let mut sorted: Vec<&ProblemId> = ids.iter().collect();
    sorted.sort();
    let mut alloc = vec![eff_min; sorted.len()];
    let mut b_rem = budget - n * eff_min;

    let by_id: Vec<usize> = (0..sorted.len()).collect();
    b_rem -= distribute_uniform(&mut alloc, &by_id, b_rem, g_max);
    debug_assert_eq!(b_rem, 0);
    Ok(finish_plan(
        &sorted,
        alloc,
        budget - b_rem,
        feasibility_scaled,
    ))
}

/// Spreads `target` rollouts as evenly as possible over the entries named by
/// `idxs` (in the given order), never exceeding `g_max`. Returns the amount
/// actually placed.
fn distribute_uniform(alloc: &mut [u64], idxs: &[usize], target: u64, g_max: u64) -> u64 {
    let mut remaining = target;
    loop {
        if remaining == 0 {
            break;
        }
        let open: Vec<usize> = idxs.iter().copied().filter(|&i| alloc[i] < g_max).collect();
        if open.is_empty() {
            break;
        }
        let per = remaining / open.len() as u64;
        if per == 0 {
            for i in open {
                if remaining == 0 {
                    break;
                }
                alloc[i] += 1;
                remaining -= 1;
            }
            break;
        }
        for i in open {
            let dg = per.min(g_max - alloc[i]).min(remaining);
            alloc[i] += dg;
            remaining -= dg;
        }
    }
    target - remaining
}

/// Hands out one rollout per eligible entry per cycle, in the given order,
/// until the budget runs out or everything is capped. Returns the amount
/// actually placed.
fn round_robin(alloc: &mut [u64], idxs: &[usize], budget: u64, g_max: u64) -> u64 {
    let mut remaining = budget;
    loop {
        let mut progressed = false;
        for &i in idxs {
            if remaining == 0 {
                return budget;
            }
            if alloc[i] < g_max {
                alloc[i] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed || remaining == 0 {
            break;
        }
    }
    budget - remaining
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::PrioritySnapshot;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn snapshot(priorities: &[(&str, f64)], insufficient: &[&str]) -> PrioritySnapshot {
        PrioritySnapshot {
            priorities: priorities
                .iter()
                .map(|(id, p)| (ProblemId::from(*id), *p))
                .collect(),
            insufficient: insufficient.iter().map(|id| ProblemId::from(*id)).collect(),
        }
    }

    fn config(budget: u64, min: u64, max: u64) -> AllocationConfig {
        AllocationConfig::new(budget, min, max).unwrap()
    }

    #[test]
    fn continuous_symmetric_split() {
        let alloc = optimal_continuous_allocation(&[1.0, 1.0], 10.0).unwrap();
        assert_eq!(alloc, vec![5.0, 5.0]);
    }

    #[test]
    fn continuous_proportional_split() {
        let alloc = optimal_continuous_allocation(&[1.0, 3.0], 8.0).unwrap();
        assert!((alloc[0] - 2.0).abs() < 1e-12);
        assert!((alloc[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn continuous_zero_sigma_gets_nothing() {
        let alloc = optimal_continuous_allocation(&[2.0, 0.0, 2.0], 6.0).unwrap();
        assert_eq!(alloc, vec![3.0, 0.0, 3.0]);
    }

    #[test]
    fn continuous_rejects_all_zero() {
        assert_eq!(
            optimal_continuous_allocation(&[0.0, 0.0], 4.0),
            Err(AllocatorError::DegenerateSigmas)
        );
    }

    #[test]
    fn ratio_equal_sigmas_is_one() {
        for c in [0.1, 1.0, 7.5] {
            let r = variance_ratio(&[c, c, c]).unwrap();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_known_values() {
        assert!((variance_ratio(&[1.0, 3.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!((variance_ratio(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn feasibility_scale_cases() {
        assert_eq!(feasibility_scale(4, &config(64, 8, 24)), 8);
        assert_eq!(feasibility_scale(10, &config(50, 8, 24)), 5);
        assert_eq!(feasibility_scale(3, &config(2, 1, 24)), 0);
    }

    #[test]
    fn single_problem_absorbs_budget() {
        let plan =
            water_level_allocate(&snapshot(&[("p1", 0.2)], &[]), &config(16, 8, 24)).unwrap();
        assert_eq!(plan.get(&ProblemId::from("p1")), Some(16));
        assert_eq!(plan.consumed, 16);
        assert!(!plan.feasibility_scaled);
    }

    #[test]
    fn oversized_budget_caps_everything() {
        let plan = water_level_allocate(
            &snapshot(&[("p1", 0.1), ("p2", 0.1)], &[]),
            &config(100, 4, 16),
        )
        .unwrap();
        assert_eq!(plan.get(&ProblemId::from("p1")), Some(16));
        assert_eq!(plan.get(&ProblemId::from("p2")), Some(16));
        assert_eq!(plan.consumed, 32);
    }

    #[test]
    fn uniform_fallback_without_signal() {
        let snap = snapshot(&[("p1", 0.0), ("p2", 0.0)], &["p3", "p4"]);
        let plan = water_level_allocate(&snap, &config(32, 4, 16)).unwrap();
        for id in ["p1", "p2", "p3", "p4"] {
            assert_eq!(plan.get(&ProblemId::from(id)), Some(8), "problem {id}");
        }
        assert_eq!(plan.consumed, 32);
    }

    #[test]
    fn tied_priorities_consume_budget_and_pin_zero() {
        let snap = snapshot(&[("p1", 0.25), ("p2", 0.25), ("p3", 0.0)], &[]);
        let cfg = config(24, 4, 16);
        let plan = water_level_allocate(&snap, &cfg).unwrap();
        let total: u64 = plan.allocations.values().sum();
        assert_eq!(total, 24);
        assert_eq!(plan.consumed, 24);
        assert_eq!(plan.get(&ProblemId::from("p3")), Some(4));
        for n in plan.allocations.values() {
            assert!((4..=16).contains(n));
        }
        assert!(plan.get(&ProblemId::from("p1")) >= plan.get(&ProblemId::from("p2")));
        // Deterministic given identical inputs.
        assert_eq!(plan, water_level_allocate(&snap, &cfg).unwrap());
    }

    #[test]
    fn insufficient_problems_get_uniform_slice() {
        let snap = snapshot(&[("p1", 0.25), ("p2", 0.25)], &["s1", "s2"]);
        let plan = water_level_allocate(&snap, &config(32, 4, 16)).unwrap();
        assert_eq!(plan.consumed, 32);
        // floor(32 * 2 / 4) = 16 split evenly over the two data-scarce ids.
        assert_eq!(plan.get(&ProblemId::from("s1")), Some(8));
        assert_eq!(plan.get(&ProblemId::from("s2")), Some(8));
        let p1 = plan.get(&ProblemId::from("p1")).unwrap();
        let p2 = plan.get(&ProblemId::from("p2")).unwrap();
        assert_eq!(p1 + p2, 16);
        assert!(p1 >= p2);
    }

    #[test]
    fn feasibility_scaling_kicks_in() {
        let snap = snapshot(&[("p1", 0.2), ("p2", 0.1)], &[]);
        let plan = water_level_allocate(&snap, &config(10, 8, 24)).unwrap();
        assert!(plan.feasibility_scaled);
        assert_eq!(plan.consumed, 10);
        let total: u64 = plan.allocations.values().sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn empty_snapshot_rejected() {
        let snap = PrioritySnapshot::default();
        assert_eq!(
            water_level_allocate(&snap, &config(8, 2, 4)),
            Err(AllocatorError::EmptySnapshot)
        );
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert_eq!(
            AllocationConfig::new(8, 6, 4),
            Err(AllocatorError::InfeasibleBounds { min: 6, max: 4 })
        );
    }

    #[test]
    fn nan_priority_rejected() {
        let snap = snapshot(&[("p1", f64::NAN)], &[]);
        assert!(matches!(
            water_level_allocate(&snap, &config(8, 2, 4)),
            Err(AllocatorError::InvalidPriority { .. })
        ));
    }

    #[test]
    fn uniform_allocate_exact_average() {
        let ids: Vec<ProblemId> = (0..5).map(|i| ProblemId::new(format!("p{i}"))).collect();
        let plan = uniform_allocate(&ids, &config(80, 8, 24)).unwrap();
        for id in &ids {
            assert_eq!(plan.get(id), Some(16));
        }
        assert_eq!(plan.consumed, 80);
    }

    #[test]
    fn continuous_optimum_beats_uniform() {
        let sigmas = [0.5, 1.5, 0.1, 2.0];
        let budget = 40.0;
        let opt = optimal_continuous_allocation(&sigmas, budget).unwrap();
        let uniform = vec![budget / sigmas.len() as f64; sigmas.len()];
        let v_opt = total_variance(&sigmas, &opt);
        let v_uni = total_variance(&sigmas, &uniform);
        assert!(v_opt <= v_uni);
        let ratio = variance_ratio(&sigmas).unwrap();
        assert!((v_opt / v_uni - ratio).abs() < 1e-12);
    }

    fn arb_snapshot() -> impl Strategy<Value = PrioritySnapshot> {
        (
            prop::collection::vec(0.0f64..0.5, 1..20),
            prop::collection::vec(any::<bool>(), 0..5),
        )
            .prop_map(|(ps, insufficient)| {
                let mut snap = PrioritySnapshot::default();
                for (i, p) in ps.iter().enumerate() {
                    snap.priorities
                        .insert(ProblemId::new(format!("p{i:03}")), *p);
                }
                for (i, flag) in insufficient.iter().enumerate() {
                    if *flag {
                        snap.insufficient.insert(ProblemId::new(format!("s{i:03}")));
                    }
                }
                snap
            })
    }

    proptest! {
        #[test]
        fn budget_consumed_exactly_when_feasible(
            snap in arb_snapshot(),
            min in 1u64..8,
            extra in 0u64..16,
            slack in 0u64..200,
        ) {
            let n = snap.len() as u64;
            let max = min + extra;
            let budget = (n * min + slack).min(n * max);
            let cfg = config(budget, min, max);
            let plan = water_level_allocate(&snap, &cfg).unwrap();
            let total: u64 = plan.allocations.values().sum();
            prop_assert_eq!(total, budget);
            prop_assert_eq!(plan.consumed, budget);
            for v in plan.allocations.values() {
                prop_assert!(*v >= min && *v <= max);
            }
        }

        #[test]
        fn higher_priority_never_gets_less(
            snap in arb_snapshot(),
            min in 1u64..8,
            extra in 1u64..16,
            slack in 0u64..200,
        ) {
            let n = snap.len() as u64;
            let max = min + extra;
            let budget = (n * min + slack).min(n * max);
            let plan = water_level_allocate(&snap, &config(budget, min, max)).unwrap();
            let entries: Vec<(&ProblemId, f64)> = snap.priorities.iter().map(|(i, p)| (i, *p)).collect();
            for (ia, pa) in &entries {
                for (ib, pb) in &entries {
                    if pa > pb {
                        prop_assert!(
                            plan.allocations[*ia] >= plan.allocations[*ib],
                            "priority {} > {} but allocation {} < {}",
                            pa, pb, plan.allocations[*ia], plan.allocations[*ib]
                        );
                    }
                }
            }
        }

        #[test]
        fn scale_invariant_under_positive_constants(
            snap in arb_snapshot(),
            slack in 0u64..100,
        ) {
            let n = snap.len() as u64;
            let cfg = config((n * 4 + slack).min(n * 16), 4, 16);
            let base = water_level_allocate(&snap, &cfg).unwrap();
            for c in [0.25f64, 2.0, 1024.0] {
                let scaled = PrioritySnapshot {
                    priorities: snap
                        .priorities
                        .iter()
                        .map(|(id, p)| (id.clone(), p * c))
                        .collect(),
                    insufficient: snap.insufficient.clone(),
                };
                let plan = water_level_allocate(&scaled, &cfg).unwrap();
                prop_assert_eq!(&plan.allocations, &base.allocations);
            }
        }
    }

    #[test]
    fn plan_serializes_with_stable_schema() {
        let mut allocations = BTreeMap::new();
        allocations.insert(ProblemId::from("a"), 4u64);
        let plan = AllocationPlan {
            allocations,
            consumed: 4,
            feasibility_scaled: false,
        };
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(
            json,
            "{\"allocations\":{\"a\":4},\"consumed\":4,\"feasibility_scaled\":false}"
        );
    }
}
