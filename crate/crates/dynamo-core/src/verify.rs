//! Seeded invariant suites, runnable from the CLI (`dynamo verify <suite>`).
//!
//! Every check uses an independent oracle — enumeration, finite differences,
//! Monte Carlo, or exact recomputation — rather than the identity under
//! test. Failures carry the violating witness in `detail`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::allocator::{
    optimal_continuous_allocation, total_variance, variance_ratio, water_level_allocate,
    AllocationConfig,
};
use crate::grpo::{clip_gate, composite_coefficient, group_advantage, importance_ratio};
use crate::modulation::{
    compensation_factor, estimate_entropy_change, factorized_entropy_change, instability_indicator,
    modulate_advantage, stabilization_factor, BatchEntropyStats, ModulationConfig,
};
use crate::policy::{apply_logit_update, collision_probability, entropy, score_gradient, softmax};
use crate::sim::derive_rng;
use crate::stats::{bernoulli_priority, PrioritySnapshot};
use crate::ProblemId;

/// Named invariant suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Stats,
    Allocator,
    Policy,
    Grpo,
    Modulation,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Stats,
        Suite::Allocator,
        Suite::Policy,
        Suite::Grpo,
        Suite::Modulation,
        Suite::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Stats => "stats",
            Suite::Allocator => "allocator",
            Suite::Policy => "policy",
            Suite::Grpo => "grpo",
            Suite::Modulation => "modulation",
            Suite::Convergence => "convergence",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.iter().find(|s| s.name() == name).copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, checks: Vec<CheckResult>) -> Self {
        SuiteReport {
            suite: suite.name().to_string(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs one suite with generators derived from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let checks = match suite {
        Suite::Stats => stats_checks(seed),
        Suite::Allocator => allocator_checks(seed),
        Suite::Policy => policy_checks(seed),
        Suite::Grpo => grpo_checks(seed),
        Suite::Modulation => modulation_checks(seed),
        Suite::Convergence => convergence_checks(seed),
    };
    SuiteReport::new(suite, seed, checks)
}

// ---------------------------------------------------------------------------
// shared random generators

fn suite_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    derive_rng(seed, &[0xFE, tag])
}

/// Symmetric Dirichlet(1) sample: normalized unit exponentials.
fn random_distribution(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v)
        .map(|_| {
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
            -u.ln()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

// ---------------------------------------------------------------------------
// stats

fn stats_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();

    // Monte Carlo unbiasedness: E[P] = p(1-p) for p = 0.3, G = 16.
    let start = Instant::now();
    let mut rng = suite_rng(seed, 1);
    let (p, g, reps) = (0.3f64, 16u64, 100_000usize);
    let mut total = 0.0;
    for _ in 0..reps {
        let k = (0..g).filter(|_| rng.gen::<f64>() < p).count() as u64;
        total += bernoulli_priority(g, k).expect("g >= 2");
    }
    let mean = total / reps as f64;
    let err = (mean - p * (1.0 - p)).abs();
    let elapsed = start.elapsed();
    checks.push(check(
        "priority_unbiased_monte_carlo",
        err < 0.005 && elapsed.as_secs_f64() < 5.0,
        format!("mean {mean:.6} vs 0.21 (|err| {err:.6}), {elapsed:?}"),
    ));

    // Symmetry over an exhaustive grid.
    let mut sym_ok = true;
    let mut witness = String::new();
    'outer: for g in 2..=64u64 {
        for k in 0..=g {
            let a = bernoulli_priority(g, k).unwrap();
            let b = bernoulli_priority(g, g - k).unwrap();
            if (a - b).abs() > 1e-15 {
                sym_ok = false;
                witness = format!("G={g} k={k}: {a} vs {b}");
                break 'outer;
            }
        }
    }
    checks.push(check(
        "priority_symmetry",
        sym_ok,
        if sym_ok {
            "G in 2..=64 exhaustive".into()
        } else {
            witness
        },
    ));

    // Range [0, 0.5] with the peak at the balanced count.
    let mut range_ok = true;
    let mut witness = String::new();
    for g in 2..=64u64 {
        let mut best = (0u64, -1.0f64);
        for k in 0..=g {
            let p = bernoulli_priority(g, k).unwrap();
            if !(0.0..=0.5).contains(&p) {
                range_ok = false;
                witness = format!("G={g} k={k}: P={p} out of range");
            }
            if p > best.1 {
                best = (k, p);
            }
        }
        if best.0 != g / 2 && best.0 != g - g / 2 {
            range_ok = false;
            witness = format!("G={g}: peak at k={}", best.0);
        }
    }
    checks.push(check(
        "priority_range_and_peak",
        range_ok,
        if range_ok {
            "G in 2..=64 exhaustive".into()
        } else {
            witness
        },
    ));

    checks
}

// ---------------------------------------------------------------------------
// allocator

fn random_snapshot(rng: &mut ChaCha8Rng, n: usize) -> PrioritySnapshot {
    let mut snap = PrioritySnapshot::default();
    for i in 0..n {
        let id = ProblemId::new(format!("p{i:05}"));
        if rng.gen::<f64>() < 0.1 {
            snap.insufficient.insert(id);
        } else {
            let p = if rng.gen::<f64>() < 0.1 {
                0.0
            } else {
                rng.gen::<f64>() * 0.5
            };
            snap.priorities.insert(id, p);
        }
    }
    snap
}

fn allocator_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let mut rng = suite_rng(seed, 2);

    // Continuous optimum achieves exactly the Cauchy-Schwarz ratio.
    let mut opt_ok = true;
    let mut witness = String::new();
    for trial in 0..100 {
        let n = 10;
        let sigmas: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 + 1e-3).collect();
        let budget = 50.0;
        let opt = optimal_continuous_allocation(&sigmas, budget).unwrap();
        let uniform = vec![budget / n as f64; n];
        let measured = total_variance(&sigmas, &opt) / total_variance(&sigmas, &uniform);
        let ratio = variance_ratio(&sigmas).unwrap();
        if (measured - ratio).abs() > 1e-12 || ratio > 1.0 + 1e-12 {
            opt_ok = false;
            witness = format!("trial {trial}: measured {measured} vs ratio {ratio}");
            break;
        }
    }
    let equal = variance_ratio(&[0.7; 10]).unwrap();
    if (equal - 1.0).abs() > 1e-12 {
        opt_ok = false;
        witness = format!("equal sigmas ratio {equal} != 1");
    }
    checks.push(check(
        "continuous_optimality_ratio",
        opt_ok,
        if opt_ok {
            "100 random sigma vectors, N=10".into()
        } else {
            witness
        },
    ));

    // Integer allocator: exact budget, bounds, monotonicity.
    let mut alloc_ok = true;
    let mut witness = String::new();
    for trial in 0..1000 {
        let n = rng.gen_range(1..30);
        let snap = random_snapshot(&mut rng, n);
        let min = rng.gen_range(1..6);
        let max = min + rng.gen_range(1..12);
        let budget = rng.gen_range(n as u64 * min..=n as u64 * max);
        let config = AllocationConfig {
            total_budget: budget,
            min_per_problem: min,
            max_per_problem: max,
        };
        let plan = water_level_allocate(&snap, &config).unwrap();
        let total: u64 = plan.allocations.values().sum();
        if total != budget || plan.consumed != budget {
            alloc_ok = false;
            witness = format!("trial {trial}: consumed {total} != budget {budget}");
            break;
        }
        if plan.allocations.values().any(|v| *v < min || *v > max) {
            alloc_ok = false;
            witness = format!("trial {trial}: bounds violated");
            break;
        }
        let entries: Vec<(&ProblemId, f64)> =
            snap.priorities.iter().map(|(i, p)| (i, *p)).collect();
        for (ia, pa) in &entries {
            for (ib, pb) in &entries {
                if pa > pb && plan.allocations[*ia] < plan.allocations[*ib] {
                    alloc_ok = false;
                    witness = format!(
                        "trial {trial}: P({ia})={pa} > P({ib})={pb} but {} < {}",
                        plan.allocations[*ia], plan.allocations[*ib]
                    );
                }
            }
        }
        if !alloc_ok {
            break;
        }
    }
    checks.push(check(
        "water_level_contract",
        alloc_ok,
        if alloc_ok {
            "1000 random snapshots: exact budget, bounds, monotonicity".into()
        } else {
            witness
        },
    ));

    // Large-N termination speed.
    let n = 100_000;
    let snap = random_snapshot(&mut rng, n);
    let config = AllocationConfig {
        total_budget: n as u64 * 16,
        min_per_problem: 8,
        max_per_problem: 24,
    };
    let start = Instant::now();
    let plan = water_level_allocate(&snap, &config).unwrap();
    let elapsed = start.elapsed();
    let total: u64 = plan.allocations.values().sum();
    checks.push(check(
        "termination_at_scale",
        total == config.total_budget && elapsed.as_secs_f64() < 1.0,
        format!("N=100000 allocated in {elapsed:?}"),
    ));

    // Scaling priorities by a positive constant changes nothing.
    let mut scale_ok = true;
    let mut witness = String::new();
    for trial in 0..50 {
        let n = rng.gen_range(1..20);
        let snap = random_snapshot(&mut rng, n);
        let config = AllocationConfig {
            total_budget: n as u64 * 10,
            min_per_problem: 4,
            max_per_problem: 16,
        };
        let base = water_level_allocate(&snap, &config).unwrap();
        for c in [0.25f64, 2.0, 1024.0] {
            let scaled = PrioritySnapshot {
                priorities: snap
                    .priorities
                    .iter()
                    .map(|(id, p)| (id.clone(), p * c))
                    .collect(),
                insufficient: snap.insufficient.clone(),
            };
            let plan = water_level_allocate(&scaled, &config).unwrap();
            if plan.allocations != base.allocations {
                scale_ok = false;
                witness = format!("trial {trial}, scale {c}: allocations changed");
            }
        }
        if !scale_ok {
            break;
        }
    }
    checks.push(check(
        "scale_invariance",
        scale_ok,
        if scale_ok {
            "50 snapshots x scales {0.25, 2, 1024}".into()
        } else {
            witness
        },
    ));

    checks
}

// ---------------------------------------------------------------------------
// policy

fn policy_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let mut rng = suite_rng(seed, 3);

    // Enumerated E||grad log pi||^2 vs 1 - collision, and the Jensen bound,
    // on 10^4 Dirichlet draws over V in 2..=64.
    let mut identity_ok = true;
    let mut jensen_ok = true;
    let mut id_witness = String::new();
    let mut jen_witness = String::new();
    for trial in 0..10_000 {
        let v = rng.gen_range(2..=64);
        let probs = random_distribution(&mut rng, v);
        let mut enumerated = 0.0;
        for a in 0..v {
            let g = score_gradient(&probs, a).unwrap();
            enumerated += probs[a] * g.iter().map(|x| x * x).sum::<f64>();
        }
        let closed = 1.0 - collision_probability(&probs);
        if (enumerated - closed).abs() > 1e-12 {
            identity_ok = false;
            id_witness = format!("trial {trial} V={v}: {enumerated} vs {closed}");
        }
        let slack = collision_probability(&probs) - (-entropy(&probs)).exp();
        if slack < -1e-12 {
            jensen_ok = false;
            jen_witness = format!("trial {trial} V={v}: slack {slack}");
        }
        if !identity_ok && !jensen_ok {
            break;
        }
    }
    // Jensen equality for uniform distributions.
    for v in 2..=64usize {
        let uniform = vec![1.0 / v as f64; v];
        let gap = (collision_probability(&uniform) - (-entropy(&uniform)).exp()).abs();
        if gap > 1e-12 {
            jensen_ok = false;
            jen_witness = format!("uniform V={v}: gap {gap}");
        }
    }
    checks.push(check(
        "gradient_norm_identity",
        identity_ok,
        if identity_ok {
            "10^4 Dirichlet draws, V in 2..=64".into()
        } else {
            id_witness
        },
    ));
    checks.push(check(
        "jensen_collision_bound",
        jensen_ok,
        if jensen_ok {
            "10^4 draws; equality on uniform to 1e-12".into()
        } else {
            jen_witness
        },
    ));

    // Score gradient vs central finite differences of log softmax.
    let mut fd_ok = true;
    let mut witness = String::new();
    for trial in 0..100 {
        let v = rng.gen_range(2..10);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let action = rng.gen_range(0..v);
        let probs = softmax(&logits).unwrap();
        let grad = score_gradient(&probs, action).unwrap();
        let h = 1e-6;
        for i in 0..v {
            let mut zp = logits.clone();
            zp[i] += h;
            let mut zm = logits.clone();
            zm[i] -= h;
            let fd = (softmax(&zp).unwrap()[action].ln() - softmax(&zm).unwrap()[action].ln())
                / (2.0 * h);
            if (fd - grad[i]).abs() / grad[i].abs().max(1.0) > 1e-6 {
                fd_ok = false;
                witness = format!("trial {trial} coord {i}: fd {fd} vs {}", grad[i]);
            }
        }
        if !fd_ok {
            break;
        }
    }
    checks.push(check(
        "score_gradient_finite_difference",
        fd_ok,
        if fd_ok {
            "100 random logit vectors, step 1e-6".into()
        } else {
            witness
        },
    ));

    // Translation invariance of softmax.
    let mut shift_ok = true;
    let mut witness = String::new();
    for trial in 0..200 {
        let v = rng.gen_range(2..16);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
        let c = rng.gen::<f64>() * 200.0 - 100.0;
        let base = softmax(&logits).unwrap();
        let shifted = softmax(&logits.iter().map(|z| z + c).collect::<Vec<_>>()).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            if (a - b).abs() > 1e-12 {
                shift_ok = false;
                witness = format!("trial {trial}: {a} vs {b} under shift {c}");
            }
        }
        if !shift_ok {
            break;
        }
    }
    checks.push(check(
        "softmax_translation_invariance",
        shift_ok,
        if shift_ok {
            "200 random shifts".into()
        } else {
            witness
        },
    ));

    // Average over sampled actions of the logit update is zero.
    let mut center_ok = true;
    let mut witness = String::new();
    for trial in 0..200 {
        let v = rng.gen_range(2..10);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let xi = rng.gen::<f64>() * 4.0 - 2.0;
        let probs = softmax(&logits).unwrap();
        let mut mean = vec![0.0; v];
        for (action, weight) in probs.iter().enumerate() {
            let updated = apply_logit_update(&logits, action, xi, 0.1).unwrap();
            for (m, (u, z)) in mean.iter_mut().zip(updated.iter().zip(&logits)) {
                *m += weight * (u - z);
            }
        }
        if mean.iter().any(|m| m.abs() > 1e-12) {
            center_ok = false;
            witness = format!("trial {trial}: mean delta {mean:?}");
            break;
        }
    }
    checks.push(check(
        "update_centering",
        center_ok,
        if center_ok {
            "200 random (logits, xi)".into()
        } else {
            witness
        },
    ));

    checks
}

// ---------------------------------------------------------------------------
// grpo

fn grpo_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let mut rng = suite_rng(seed, 4);

    // Advantage moments and the binary zero-sum structure.
    let mut moments_ok = true;
    let mut witness = String::new();
    for trial in 0..500 {
        let g = rng.gen_range(2..64);
        let rewards: Vec<u8> = (0..g).map(|_| u8::from(rng.gen::<f64>() < 0.4)).collect();
        let adv = group_advantage(&rewards).unwrap();
        let mean = adv.iter().sum::<f64>() / g as f64;
        if mean.abs() > 1e-12 {
            moments_ok = false;
            witness = format!("trial {trial}: mean {mean}");
            break;
        }
        let ones: usize = rewards.iter().map(|r| *r as usize).sum();
        if ones > 0 && ones < g {
            let var = adv.iter().map(|a| a * a).sum::<f64>() / g as f64;
            if (var - 1.0).abs() > 1e-9 {
                moments_ok = false;
                witness = format!("trial {trial}: var {var}");
                break;
            }
            let pos = adv.iter().copied().find(|a| *a > 0.0).unwrap();
            let neg = adv.iter().copied().find(|a| *a < 0.0).unwrap();
            let balance = pos * ones as f64 + neg * (g - ones) as f64;
            if balance.abs() > 1e-9 {
                moments_ok = false;
                witness = format!("trial {trial}: zero-sum residual {balance}");
                break;
            }
        } else if adv.iter().any(|a| *a != 0.0) {
            moments_ok = false;
            witness = format!("trial {trial}: degenerate group with nonzero advantage");
            break;
        }
    }
    checks.push(check(
        "advantage_moments_and_zero_sum",
        moments_ok,
        if moments_ok {
            "500 random reward groups".into()
        } else {
            witness
        },
    ));

    // Surrogate derivative w.r.t. logp_new equals xi (finite differences),
    // and xi = 0 exactly when the gate is closed.
    let mut deriv_ok = true;
    let mut witness = String::new();
    let clip_eps = 0.2;
    for trial in 0..500 {
        let advantage = rng.gen::<f64>() * 4.0 - 2.0;
        let logp_old = -rng.gen::<f64>() * 3.0 - 0.05;
        let logp_new = logp_old + rng.gen::<f64>() * 1.0 - 0.5;
        let ratio = importance_ratio(logp_new, logp_old);
        // Stay clear of the clip boundary where the min is not smooth.
        if ((ratio - (1.0 + clip_eps)).abs() < 1e-3) || ((ratio - (1.0 - clip_eps)).abs() < 1e-3) {
            continue;
        }
        let gate = clip_gate(ratio, advantage, clip_eps);
        let xi = composite_coefficient(gate, ratio, advantage);
        if gate != (xi != 0.0) && advantage != 0.0 {
            deriv_ok = false;
            witness = format!("trial {trial}: gate {gate} but xi {xi}");
            break;
        }
        let h = 1e-6;
        let eval = |lp: f64| {
            let r = importance_ratio(lp, logp_old);
            (r * advantage).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
        };
        let fd = (eval(logp_new + h) - eval(logp_new - h)) / (2.0 * h);
        if (fd - xi).abs() > 1e-5 * xi.abs().max(1.0) {
            deriv_ok = false;
            witness = format!("trial {trial}: fd {fd} vs xi {xi} (r={ratio}, A={advantage})");
            break;
        }
    }
    checks.push(check(
        "surrogate_derivative_equals_xi",
        deriv_ok,
        if deriv_ok {
            "500 random tokens, step 1e-6".into()
        } else {
            witness
        },
    ));

    checks
}

// ---------------------------------------------------------------------------
// modulation

fn modulation_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let mut rng = suite_rng(seed, 5);

    // alpha = 0 collapses both factors to exactly 1.
    let mut reduction_ok = true;
    let mut witness = String::new();
    let zero_alpha = ModulationConfig::new(0.0, 10.0, 0.5, 0.01).unwrap();
    let stats = BatchEntropyStats {
        h_min: 0.2,
        h_max: 2.5,
        max_instability: 0.8,
    };
    for trial in 0..500 {
        let advantage = rng.gen::<f64>() * 4.0 - 2.0;
        let h = 0.2 + rng.gen::<f64>() * 2.3;
        let inst = rng.gen::<f64>() * 0.8;
        let bc = compensation_factor(advantage, h, &stats, 0.0);
        let bs = stabilization_factor(inst, &stats, &zero_alpha);
        if bc != 1.0 || bs != 1.0 {
            reduction_ok = false;
            witness = format!("trial {trial}: bc {bc}, bs {bs}");
            break;
        }
        if modulate_advantage(advantage, bc, bs) != advantage {
            reduction_ok = false;
            witness = format!("trial {trial}: advantage changed under identity");
            break;
        }
    }
    checks.push(check(
        "grpo_reduction_at_alpha_zero",
        reduction_ok,
        if reduction_ok {
            "500 random tokens".into()
        } else {
            witness
        },
    ));

    // Bounded amplification and sign preservation for random alpha.
    let mut bounds_ok = true;
    let mut witness = String::new();
    for trial in 0..1000 {
        let alpha = rng.gen::<f64>() * 0.95;
        let config = ModulationConfig::new(alpha, 10.0, 0.5, 0.01).unwrap();
        let advantage = rng.gen::<f64>() * 4.0 - 2.0;
        let h = 0.2 + rng.gen::<f64>() * 2.3;
        let inst = rng.gen::<f64>() * 0.8;
        let bc = compensation_factor(advantage, h, &stats, alpha);
        let bs = stabilization_factor(inst, &stats, &config);
        let out = modulate_advantage(advantage, bc, bs);
        let lo = (1.0 - alpha) * advantage.abs() - 1e-12;
        let hi = (1.0 + alpha) * advantage.abs() + 1e-12;
        if out.abs() < lo || out.abs() > hi || out.signum() != advantage.signum() {
            bounds_ok = false;
            witness = format!("trial {trial}: A {advantage} alpha {alpha} -> {out}");
            break;
        }
    }
    checks.push(check(
        "bounded_amplification_and_sign",
        bounds_ok,
        if bounds_ok {
            "1000 random (alpha, token)".into()
        } else {
            witness
        },
    ));

    // Monotonicity of both factors.
    let mut mono_ok = true;
    let mut witness = String::new();
    let config = ModulationConfig::new(0.3, 8.0, 0.4, 0.01).unwrap();
    for trial in 0..500 {
        let h1 = 0.2 + rng.gen::<f64>() * 2.3;
        let h2 = 0.2 + rng.gen::<f64>() * 2.3;
        let (h_lo, h_hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        if compensation_factor(1.0, h_lo, &stats, 0.3) < compensation_factor(1.0, h_hi, &stats, 0.3)
        {
            mono_ok = false;
            witness = format!("trial {trial}: compensation increased in entropy");
            break;
        }
        let i1 = rng.gen::<f64>() * 0.8;
        let i2 = rng.gen::<f64>() * 0.8;
        let (i_lo, i_hi) = if i1 <= i2 { (i1, i2) } else { (i2, i1) };
        if stabilization_factor(i_lo, &stats, &config) < stabilization_factor(i_hi, &stats, &config)
        {
            mono_ok = false;
            witness = format!("trial {trial}: stabilization increased in instability");
            break;
        }
    }
    checks.push(check(
        "factor_monotonicity",
        mono_ok,
        if mono_ok {
            "500 random pairs".into()
        } else {
            witness
        },
    ));

    // Enumerated expectation of the single-sample estimate matches the
    // factorized sum once coefficients are centered under the policy.
    let mut factorized_ok = true;
    let mut witness = String::new();
    for trial in 0..1000 {
        let v = rng.gen_range(2..=16);
        let probs = random_distribution(&mut rng, v);
        let mut xis: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let mean: f64 = probs.iter().zip(&xis).map(|(p, x)| p * x).sum();
        for x in &mut xis {
            *x -= mean;
        }
        let lr = 0.01;
        let enumerated: f64 = (0..v)
            .map(|a| probs[a] * estimate_entropy_change(&probs, a, xis[a], lr))
            .sum();
        let factorized = factorized_entropy_change(&probs, &xis, lr);
        if (enumerated - factorized).abs() > 1e-12 {
            factorized_ok = false;
            witness = format!("trial {trial}: enumerated {enumerated} vs factorized {factorized}");
            break;
        }
    }
    checks.push(check(
        "factorized_entropy_change_consistency",
        factorized_ok,
        if factorized_ok {
            "1000 random (distribution, xi) sets".into()
        } else {
            witness
        },
    ));

    // Degenerate batches: flat entropy range and all-zero instability.
    let flat = BatchEntropyStats {
        h_min: 1.0,
        h_max: 1.0,
        max_instability: 0.0,
    };
    let cfg = ModulationConfig::new(0.2, 10.0, 0.5, 0.01).unwrap();
    let g_flat = compensation_factor(1.0, 1.0, &flat, 0.2);
    let f_zero = stabilization_factor(0.0, &flat, &cfg);
    let f_expected = cfg.lambda_min() + (1.0 - cfg.lambda_min()) * (1.0 / (1.0 + (-5.0f64).exp()));
    let degenerate_ok = g_flat == 1.0 && (f_zero - f_expected).abs() < 1e-12;
    checks.push(check(
        "degenerate_batch_limits",
        degenerate_ok,
        format!("g {g_flat} (want 1), f(0) {f_zero} (want {f_expected})"),
    ));

    // Instability indicator is an absolute value.
    let inst_ok = instability_indicator(-0.25) == 0.25 && instability_indicator(0.0) == 0.0;
    checks.push(check(
        "instability_indicator_absolute",
        inst_ok,
        "spot values".into(),
    ));

    checks
}

// ---------------------------------------------------------------------------
// convergence

fn convergence_checks(seed: u64) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let mut rng = suite_rng(seed, 6);

    // First-order accuracy: halving the learning rate from 1e-2 to 5e-3
    // divides the estimate error by about 4 (exact entropy recomputation as
    // the oracle). The median over random tokens lands in [3.5, 4.5].
    let mut ratios = Vec::with_capacity(1000);
    let mut skipped = 0usize;
    for _ in 0..1000 {
        let v = rng.gen_range(2..=16);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let probs = softmax(&logits).unwrap();
        let action = rng.gen_range(0..v);
        let xi = rng.gen::<f64>() * 4.0 - 2.0;
        let h0 = entropy(&probs);
        let mut errors = [0.0f64; 2];
        for (slot, lr) in [(0usize, 1e-2), (1usize, 5e-3)] {
            let est = estimate_entropy_change(&probs, action, xi, lr);
            let updated = apply_logit_update(&logits, action, xi, lr).unwrap();
            let exact = entropy(&softmax(&updated).unwrap()) - h0;
            errors[slot] = (exact - est).abs();
        }
        if errors[1] < 1e-14 {
            skipped += 1; // second-order term vanishes; the ratio is noise
            continue;
        }
        ratios.push(errors[0] / errors[1]);
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    checks.push(check(
        "entropy_estimate_error_quarters_when_lr_halves",
        (3.5..=4.5).contains(&median),
        format!(
            "median ratio {median:.4} over {} tokens ({skipped} degenerate skipped)",
            ratios.len()
        ),
    ));

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_with_default_seed() {
        for suite in Suite::ALL {
            let report = run_suite(suite, 0xD1A0);
            for check in &report.checks {
                assert!(
                    check.passed,
                    "suite {} check {} failed: {}",
                    report.suite, check.name, check.detail
                );
            }
            assert!(report.passed);
        }
    }

    #[test]
    fn suite_names_roundtrip() {
        for suite in Suite::ALL {
            assert_eq!(Suite::from_name(suite.name()), Some(suite));
        }
        assert_eq!(Suite::from_name("nope"), None);
    }

    #[test]
    fn report_serializes() {
        let report = run_suite(Suite::Convergence, 1);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"suite\":\"convergence\""));
        assert!(json.contains("\"passed\""));
    }
}
