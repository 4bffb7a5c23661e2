//! Desk-scale synthetic RLVR training loop: a problem bank with verifiable
//! binary rewards, rollout generation from the tabular policy, GRPO updates
//! with the allocation/compensation/stabilization mechanisms behind
//! ablation switches, and per-step metric collection.

pub mod config;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod rollouts;
pub mod trainer;

use thiserror::Error;

pub use config::{AblationSwitches, ModulationParams, SimConfig};
pub use metrics::{write_trace_csv, RunSummary, StepMetrics, TraceRow, TrainingMetrics};
pub use problems::{ProblemBank, ProblemSpec};
pub use rng::{bank_rng, derive_rng, derive_seed, rollout_rng};
pub use rollouts::{empirical_gradient_variance, generate_rollouts, sample_action};
pub use trainer::{
    policy_success_probability, run_experiment, run_experiment_with_bank, SimOutput, Trainer,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem bank: {0}")]
    InvalidBank(String),
    #[error("rollout group of size {0} is too small; need at least 2")]
    GroupTooSmall(u64),
    #[error("{0} samples is too few; need at least 100")]
    TooFewSamples(usize),
    #[error("numeric abort at step {step}: {context}")]
    NumericAbort { step: usize, context: String },
    #[error(transparent)]
    Allocator(#[from] crate::allocator::AllocatorError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Grpo(#[from] crate::grpo::GrpoError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("i/o error: {0}")]
    Io(String),
}
