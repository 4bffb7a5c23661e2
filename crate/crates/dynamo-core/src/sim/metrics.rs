//! Per-step training metrics, CSV/JSON emission, and per-token modulation
//! traces.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sim::config::SimConfig;
use crate::sim::SimError;
use crate::ProblemId;

/// One completed training step. The flat scalar fields become one CSV row;
/// the per-problem maps feed the JSON summary and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Rollouts actually generated this step (equals the plan's `consumed`).
    pub consumed_rollouts: u64,
    /// L2 norm of the accumulated logit delta (mean over inner epochs).
    pub grad_norm: f64,
    /// Mean sampling-time token entropy across the batch.
    pub mean_entropy: f64,
    /// Mean observed per-problem success fraction this step.
    pub mean_empirical_success: f64,
    /// Mean exact policy success probability after the update.
    pub mean_policy_success: f64,
    /// Clipped surrogate objective (modulated advantages, equal prompt
    /// weighting), evaluated on the first inner epoch.
    pub surrogate: f64,
    /// Tokens whose clip gate closed (summed over inner epochs).
    pub clipped_tokens: u64,
    /// Tokens with a stabilization factor below 1 - 1e-9.
    pub stabilized_tokens: u64,
    /// Tokens whose modulated advantage escaped the (1 +/- alpha) band or
    /// flipped sign. Structurally zero; recorded as a tripwire.
    pub modulation_violations: u64,
    /// Shannon entropy of the normalized allocation vector.
    pub allocation_entropy: f64,
    pub feasibility_scaled: bool,
    pub allocations: BTreeMap<ProblemId, u64>,
    pub empirical_success: BTreeMap<ProblemId, f64>,
    pub policy_success: BTreeMap<ProblemId, f64>,
}

impl StepMetrics {
    /// Names the first non-finite scalar, if any.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        let checks: [(&'static str, f64); 6] = [
            ("grad_norm", self.grad_norm),
            ("mean_entropy", self.mean_entropy),
            ("mean_empirical_success", self.mean_empirical_success),
            ("mean_policy_success", self.mean_policy_success),
            ("surrogate", self.surrogate),
            ("allocation_entropy", self.allocation_entropy),
        ];
        checks.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    step: usize,
    consumed_rollouts: u64,
    grad_norm: f64,
    mean_entropy: f64,
    mean_empirical_success: f64,
    mean_policy_success: f64,
    surrogate: f64,
    clipped_tokens: u64,
    stabilized_tokens: u64,
    modulation_violations: u64,
    allocation_entropy: f64,
    feasibility_scaled: &'a bool,
}

/// Full metric history of a run: one record per completed step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub steps: Vec<StepMetrics>,
}

impl TrainingMetrics {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(writer);
        for m in &self.steps {
            out.serialize(CsvRow {
                step: m.step,
                consumed_rollouts: m.consumed_rollouts,
                grad_norm: m.grad_norm,
                mean_entropy: m.mean_entropy,
                mean_empirical_success: m.mean_empirical_success,
                mean_policy_success: m.mean_policy_success,
                surrogate: m.surrogate,
                clipped_tokens: m.clipped_tokens,
                stabilized_tokens: m.stabilized_tokens,
                modulation_violations: m.modulation_violations,
                allocation_entropy: m.allocation_entropy,
                feasibility_scaled: &m.feasibility_scaled,
            })
            .map_err(|e| SimError::Io(e.to_string()))?;
        }
        out.flush().map_err(|e| SimError::Io(e.to_string()))
    }
}

/// One per-token modulation trace row. Exported as CSV with exactly these
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub token_id: u64,
    pub entropy: f64,
    pub advantage: f64,
    pub xi: f64,
    pub delta_h_est: f64,
    pub beta_comp: f64,
    pub beta_stab: f64,
    pub a_final: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)
            .map_err(|e| SimError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| SimError::Io(e.to_string()))
}

/// End-of-run summary: config echo, seed, and final success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps_completed: usize,
    pub initial_mean_policy_success: f64,
    pub final_mean_policy_success: f64,
    pub final_policy_success: BTreeMap<ProblemId, f64>,
    pub final_empirical_success: BTreeMap<ProblemId, f64>,
    pub config: SimConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_step(step: usize) -> StepMetrics {
        StepMetrics {
            step,
            consumed_rollouts: 32,
            grad_norm: 0.5,
            mean_entropy: 1.2,
            mean_empirical_success: 0.25,
            mean_policy_success: 0.3,
            surrogate: 0.01,
            clipped_tokens: 0,
            stabilized_tokens: 4,
            modulation_violations: 0,
            allocation_entropy: 0.69,
            feasibility_scaled: false,
            allocations: BTreeMap::new(),
            empirical_success: BTreeMap::new(),
            policy_success: BTreeMap::new(),
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let metrics = TrainingMetrics {
            steps: vec![sample_step(0), sample_step(1)],
        };
        let mut buf = Vec::new();
        metrics.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("step,consumed_rollouts,grad_norm"));
        assert!(lines[1].starts_with("0,32,"));
        assert!(lines[2].starts_with("1,32,"));
    }

    #[test]
    fn trace_csv_columns_are_pinned() {
        let rows = vec![TraceRow {
            token_id: 0,
            entropy: 1.0,
            advantage: 0.5,
            xi: 0.5,
            delta_h_est: -0.001,
            beta_comp: 1.1,
            beta_stab: 0.95,
            a_final: 0.5225,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .starts_with("token_id,entropy,advantage,xi,delta_h_est,beta_comp,beta_stab,a_final"));
    }

    #[test]
    fn non_finite_detection_names_field() {
        let mut m = sample_step(0);
        assert_eq!(m.non_finite_field(), None);
        m.surrogate = f64::NAN;
        assert_eq!(m.non_finite_field(), Some("surrogate"));
    }
}
