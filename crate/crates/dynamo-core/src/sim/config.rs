//! Simulation configuration.

use serde::{Deserialize, Serialize};

use crate::allocator::AllocationConfig;
use crate::grpo::StdMode;
use crate::modulation::ModulationConfig;
use crate::sim::SimError;

/// Component toggles for ablation arms. All on reproduces the full method;
/// all off is the plain GRPO baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSwitches {
    /// Dynamic rollout allocation (off: uniform budget per problem).
    pub dra: bool,
    /// Gradient compensation (off: compensation factor forced to 1).
    pub gc: bool,
    /// Update magnitude stabilization (off: stabilization factor forced to 1).
    pub ums: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches {
            dra: true,
            gc: true,
            ums: true,
        }
    }
}

impl AblationSwitches {
    pub fn all_off() -> Self {
        AblationSwitches {
            dra: false,
            gc: false,
            ums: false,
        }
    }
}

/// Modulation hyperparameters as they appear in config files; the learning
/// rate is shared with the trainer and folded in via
/// [`SimConfig::modulation_config`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModulationParams {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for ModulationParams {
    fn default() -> Self {
        ModulationParams {
            alpha: 0.2,
            gamma: 10.0,
            tau: 0.5,
        }
    }
}

/// Full configuration for a synthetic training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_problems: usize,
    pub steps: usize,
    /// Average rollouts per problem; the step budget is `n_problems * avg`.
    pub avg_rollouts_per_problem: u64,
    /// Lower allocation bound per problem.
    pub min_rollouts: u64,
    /// Upper allocation bound per problem.
    pub max_rollouts: u64,
    pub learning_rate: f64,
    pub clip_eps: f64,
    /// Gradient passes per batch. With 1 the ratios are exactly 1 at update
    /// time; more epochs exercise clipping.
    pub inner_epochs: usize,
    pub std_mode: StdMode,
    pub modulation: ModulationParams,
    /// Minimum history before a problem's priority is considered reliable.
    pub min_history: u64,
    pub seed: u64,
    pub ablation: AblationSwitches,
    /// Optional path to a problem bank JSON; when absent a bank is
    /// synthesized from the seed.
    pub problem_bank: Option<String>,
    /// Collect per-token modulation trace rows (memory-proportional to the
    /// total token count).
    pub collect_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            vocab_size: 8,
            seq_len: 4,
            n_problems: 20,
            steps: 200,
            avg_rollouts_per_problem: 16,
            min_rollouts: 8,
            max_rollouts: 24,
            learning_rate: 1e-3,
            clip_eps: 0.2,
            inner_epochs: 1,
            std_mode: StdMode::Population,
            modulation: ModulationParams::default(),
            min_history: 2,
            seed: 42,
            ablation: AblationSwitches::default(),
            problem_bank: None,
            collect_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(2..=64).contains(&self.vocab_size) {
            return Err(SimError::InvalidConfig(format!(
                "vocab_size {} outside desk-scale range [2, 64]",
                self.vocab_size
            )));
        }
        if self.seq_len == 0 {
            return Err(SimError::InvalidConfig("seq_len must be positive".into()));
        }
        if self.n_problems == 0 {
            return Err(SimError::InvalidConfig(
                "n_problems must be positive".into(),
            ));
        }
        if self.min_rollouts < 2 {
            return Err(SimError::InvalidConfig(
                "min_rollouts must be at least 2 (group normalization)".into(),
            ));
        }
        if self.min_rollouts > self.max_rollouts {
            return Err(SimError::InvalidConfig(format!(
                "min_rollouts {} exceeds max_rollouts {}",
                self.min_rollouts, self.max_rollouts
            )));
        }
        if self.avg_rollouts_per_problem < self.min_rollouts
            || self.avg_rollouts_per_problem > self.max_rollouts
        {
            return Err(SimError::InvalidConfig(format!(
                "avg_rollouts_per_problem {} outside bounds [{}, {}]",
                self.avg_rollouts_per_problem, self.min_rollouts, self.max_rollouts
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.clip_eps) || self.clip_eps == 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "clip_eps {} must lie in (0, 1)",
                self.clip_eps
            )));
        }
        if self.inner_epochs == 0 {
            return Err(SimError::InvalidConfig(
                "inner_epochs must be at least 1".into(),
            ));
        }
        self.modulation_config()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Step budget: `n_problems * avg_rollouts_per_problem`.
    pub fn step_budget(&self, n_problems: usize) -> u64 {
        n_problems as u64 * self.avg_rollouts_per_problem
    }

    pub fn allocation_config(&self, n_problems: usize) -> AllocationConfig {
        AllocationConfig {
            total_budget: self.step_budget(n_problems),
            min_per_problem: self.min_rollouts,
            max_per_problem: self.max_rollouts,
        }
    }

    pub fn modulation_config(
        &self,
    ) -> Result<ModulationConfig, crate::modulation::ModulationError> {
        ModulationConfig::new(
            self.modulation.alpha,
            self.modulation.gamma,
            self.modulation.tau,
            self.learning_rate,
        )
    }
}
