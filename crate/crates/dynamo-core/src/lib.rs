//! Variance-driven rollout allocation and gradient-aware advantage modulation
//! for tabular softmax policies trained with GRPO-style objectives on binary
//! verifiable rewards.
//!
//! The crate is organized around the two mechanisms plus the machinery needed
//! to exercise them end to end at desk scale:
//!
//! - [`stats`] — per-problem success histories and the Bernoulli variance
//!   proxy that prioritizes problems for rollout budget.
//! - [`allocator`] — the continuous variance-minimizing optimum, the integer
//!   water-level allocator, and variance-reduction diagnostics.
//! - [`policy`] — tabular softmax policies: probabilities, entropy, collision
//!   probability, score gradients, and logit updates.
//! - [`grpo`] — group-normalized advantages, importance ratios, clipping, and
//!   the clipped surrogate objective.
//! - [`modulation`] — entropy-indexed gradient compensation, first-order
//!   entropy-change estimation, and sigmoid update stabilization.
//! - [`sim`] — a deterministic synthetic training loop combining all of the
//!   above, with CSV/JSON metric output.
//! - [`verify`] — seeded invariant suites runnable from the CLI.

pub mod allocator;
pub mod grpo;
pub mod modulation;
pub mod policy;
pub mod sim;
pub mod stats;
pub mod verify;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque identifier for a problem (prompt). Stored as a string so external
/// datasets can be ingested without renumbering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProblemId(pub String);

impl ProblemId {
    pub fn new(id: impl Into<String>) -> Self {
        ProblemId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ProblemId {
    fn from(s: &str) -> Self {
        ProblemId(s.to_string())
    }
}

impl From<String> for ProblemId {
    fn from(s: String) -> Self {
        ProblemId(s)
    }
}
