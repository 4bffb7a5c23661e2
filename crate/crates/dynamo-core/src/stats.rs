//! Per-problem success histories and the Bernoulli variance priority proxy.
//!
//! For a problem with `k` correct responses out of `G` total rollouts, the
//! priority is the unbiased estimator of the reward variance `p(1-p)`:
//!
//! ```text
//! P = k (G - k) / (G (G - 1))
//! ```
//!
//! Problems with fewer than two observed rollouts cannot support the
//! estimator and are reported separately so callers can route them to a
//! uniform-allocation fallback.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ProblemId;

/// Smallest history length for which the priority estimator is defined.
pub const MIN_HISTORY: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("correct count {correct} exceeds total rollouts {total}")]
    InvalidCounts { total: u64, correct: u64 },
    #[error("insufficient history: {total} rollouts, need at least {MIN_HISTORY}")]
    InsufficientHistory { total: u64 },
    #[error("line {line}: {reason}")]
    InvalidLine { line: usize, reason: String },
    #[error("history i/o error: {0}")]
    Io(String),
}

/// Cumulative rollout/success counts for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub problem_id: ProblemId,
    pub total_rollouts: u64,
    pub correct_count: u64,
}

impl HistoryRecord {
    pub fn new(
        problem_id: impl Into<ProblemId>,
        total_rollouts: u64,
        correct_count: u64,
    ) -> Result<Self, StatsError> {
        if correct_count > total_rollouts {
            return Err(StatsError::InvalidCounts {
                total: total_rollouts,
                correct: correct_count,
            });
        }
        Ok(HistoryRecord {
            problem_id: problem_id.into(),
            total_rollouts,
            correct_count,
        })
    }

    /// Fresh record with no observations.
    pub fn empty(problem_id: impl Into<ProblemId>) -> Self {
        HistoryRecord {
            problem_id: problem_id.into(),
            total_rollouts: 0,
            correct_count: 0,
        }
    }

    /// Returns a copy with `new_rollouts`/`new_correct` added to the counters.
    /// Counters only ever grow; there is no decay or windowing.
    pub fn updated(&self, new_rollouts: u64, new_correct: u64) -> Result<Self, StatsError> {
        if new_correct > new_rollouts {
            return Err(StatsError::InvalidCounts {
                total: new_rollouts,
                correct: new_correct,
            });
        }
        Ok(HistoryRecord {
            problem_id: self.problem_id.clone(),
            total_rollouts: self.total_rollouts + new_rollouts,
            correct_count: self.correct_count + new_correct,
        })
    }

    /// Priority of this record, or an insufficient-history error.
    pub fn priority(&self) -> Result<f64, StatsError> {
        bernoulli_priority(self.total_rollouts, self.correct_count)
    }
}

/// Unbiased estimator `k(G-k) / (G(G-1))` of the Bernoulli reward variance.
///
/// Zero exactly when all rollouts succeeded or all failed; maximal (0.5,
/// attained only at G=2, k=1) for perfectly balanced outcomes.
pub fn bernoulli_priority(total_rollouts: u64, correct_count: u64) -> Result<f64, StatsError> {
    if correct_count > total_rollouts {
        return Err(StatsError::InvalidCounts {
            total: total_rollouts,
            correct: correct_count,
        });
    }
    if total_rollouts < MIN_HISTORY {
        return Err(StatsError::InsufficientHistory {
            total: total_rollouts,
        });
    }
    let g = total_rollouts as f64;
    let k = correct_count as f64;
    Ok(k * (g - k) / (g * (g - 1.0)))
}

/// Priorities for every record with enough history, plus the set of problems
/// that lack it (routed to the uniform-allocation fallback downstream).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrioritySnapshot {
    pub priorities: BTreeMap<ProblemId, f64>,
    pub insufficient: BTreeSet<ProblemId>,
}

impl PrioritySnapshot {
    pub fn is_empty(&self) -> bool {
        self.priorities.is_empty() && self.insufficient.is_empty()
    }

    pub fn len(&self) -> usize {
        self.priorities.len() + self.insufficient.len()
    }
}

/// Builds a [`PrioritySnapshot`] using the default minimum-history threshold.
pub fn snapshot_priorities<'a, I>(records: I) -> PrioritySnapshot
where
    I: IntoIterator<Item = &'a HistoryRecord>,
{
    snapshot_priorities_with_min(records, MIN_HISTORY)
}

/// As [`snapshot_priorities`] with a configurable threshold. Thresholds below
/// [`MIN_HISTORY`] are raised to it, since the estimator is undefined there.
pub fn snapshot_priorities_with_min<'a, I>(records: I, min_history: u64) -> PrioritySnapshot
where
    I: IntoIterator<Item = &'a HistoryRecord>,
{
    let min_history = min_history.max(MIN_HISTORY);
    let mut snapshot = PrioritySnapshot::default();
    for record in records {
        if record.total_rollouts < min_history {
            snapshot.insufficient.insert(record.problem_id.clone());
        } else {
            // correct_count <= total_rollouts is a HistoryRecord invariant,
            // and total_rollouts >= MIN_HISTORY here, so this cannot fail.
            let p = bernoulli_priority(record.total_rollouts, record.correct_count)
                .expect("record satisfies priority preconditions");
            snapshot.priorities.insert(record.problem_id.clone(), p);
        }
    }
    snapshot
}

#[derive(Debug, Deserialize)]
struct HistoryLine {
    problem_id: String,
    total: u64,
    correct: u64,
}

/// Result of ingesting a JSONL history file. In permissive mode, invalid
/// lines land in `skipped` with their 1-based line number and a reason.
#[derive(Debug, Default)]
pub struct HistoryLoadReport {
    pub records: Vec<HistoryRecord>,
    pub skipped: Vec<(usize, String)>,
}

/// Reads history records from JSONL: one object per line with fields
/// `problem_id` (string), `total` (integer), `correct` (integer).
///
/// In strict mode (`permissive = false`) the first invalid line aborts the
/// load with its line number. Duplicate problem ids are invalid.
pub fn load_history_jsonl<R: BufRead>(
    reader: R,
    permissive: bool,
) -> Result<HistoryLoadReport, StatsError> {
    let mut report = HistoryLoadReport::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| StatsError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_history_line(&line, &mut seen) {
            Ok(record) => report.records.push(record),
            Err(reason) => {
                if permissive {
                    report.skipped.push((line_no, reason));
                } else {
                    return Err(StatsError::InvalidLine {
                        line: line_no,
                        reason,
                    });
                }
            }
        }
    }
    Ok(report)
}

fn parse_history_line(line: &str, seen: &mut BTreeSet<String>) -> Result<HistoryRecord, String> {
    let parsed: HistoryLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !seen.insert(parsed.problem_id.clone()) {
        return Err(format!("duplicate problem_id {:?}", parsed.problem_id));
    }
    HistoryRecord::new(parsed.problem_id, parsed.total, parsed.correct).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn priority_zero_at_extremes() {
        assert_eq!(bernoulli_priority(16, 0).unwrap(), 0.0);
        assert_eq!(bernoulli_priority(16, 16).unwrap(), 0.0);
    }

    #[test]
    fn priority_balanced_matches_sample_variance() {
        let p = bernoulli_priority(16, 8).unwrap();
        assert!((p - 64.0 / 240.0).abs() < 1e-15);

        // Independent oracle: sample variance (G-1 divisor) of a binary
        // vector with eight ones out of sixteen.
        let xs: Vec<f64> = (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let mean = xs.iter().sum::<f64>() / 16.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 15.0;
        assert!((p - var).abs() < 1e-15);
    }

    #[test]
    fn priority_max_at_two_one() {
        assert_eq!(bernoulli_priority(2, 1).unwrap(), 0.5);
    }

    #[test]
    fn priority_rejects_insufficient_history() {
        assert_eq!(
            bernoulli_priority(1, 1),
            Err(StatsError::InsufficientHistory { total: 1 })
        );
        assert_eq!(
            bernoulli_priority(0, 0),
            Err(StatsError::InsufficientHistory { total: 0 })
        );
    }

    #[test]
    fn priority_rejects_invalid_counts() {
        assert_eq!(
            bernoulli_priority(4, 5),
            Err(StatsError::InvalidCounts {
                total: 4,
                correct: 5
            })
        );
    }

    #[test]
    fn update_accumulates() {
        let r = HistoryRecord::new("p1", 16, 8).unwrap();
        let r = r.updated(16, 4).unwrap();
        assert_eq!((r.total_rollouts, r.correct_count), (32, 12));

        let r = HistoryRecord::empty("p2").updated(8, 8).unwrap();
        assert_eq!((r.total_rollouts, r.correct_count), (8, 8));

        let r = HistoryRecord::new("p3", 16, 8).unwrap();
        let same = r.updated(0, 0).unwrap();
        assert_eq!(r, same);
    }

    #[test]
    fn update_rejects_invalid_batch() {
        let r = HistoryRecord::empty("p");
        assert!(r.updated(2, 3).is_err());
    }

    #[test]
    fn snapshot_routes_by_history() {
        let records = vec![
            HistoryRecord::new("p1", 16, 8).unwrap(),
            HistoryRecord::new("p2", 16, 0).unwrap(),
        ];
        let snap = snapshot_priorities(&records);
        assert!((snap.priorities[&ProblemId::from("p1")] - 64.0 / 240.0).abs() < 1e-12);
        assert_eq!(snap.priorities[&ProblemId::from("p2")], 0.0);
        assert!(snap.insufficient.is_empty());

        let records = vec![HistoryRecord::new("p1", 1, 1).unwrap()];
        let snap = snapshot_priorities(&records);
        assert!(snap.priorities.is_empty());
        assert!(snap.insufficient.contains(&ProblemId::from("p1")));

        let snap = snapshot_priorities([].iter());
        assert!(snap.is_empty());
    }

    #[test]
    fn snapshot_respects_raised_threshold() {
        let records = vec![HistoryRecord::new("p1", 4, 2).unwrap()];
        let snap = snapshot_priorities_with_min(&records, 8);
        assert!(snap.insufficient.contains(&ProblemId::from("p1")));
        // Thresholds below the formula's minimum are clamped up.
        let snap = snapshot_priorities_with_min(&records, 0);
        assert!(snap.priorities.contains_key(&ProblemId::from("p1")));
    }

    #[test]
    fn jsonl_strict_rejects_bad_line() {
        let data = "{\"problem_id\":\"a\",\"total\":4,\"correct\":2}\nnot json\n";
        let err = load_history_jsonl(data.as_bytes(), false).unwrap_err();
        match err {
            StatsError::InvalidLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn jsonl_permissive_skips_and_reports() {
        let data = concat!(
            "{\"problem_id\":\"a\",\"total\":4,\"correct\":2}\n",
            "{\"problem_id\":\"a\",\"total\":4,\"correct\":2}\n",
            "{\"problem_id\":\"b\",\"total\":2,\"correct\":5}\n",
            "{\"problem_id\":\"c\",\"total\":2,\"correct\":1}\n",
        );
        let report = load_history_jsonl(data.as_bytes(), true).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.skipped.len(), 2);
        assert_eq!(report.skipped[0].0, 2); // duplicate
        assert_eq!(report.skipped[1].0, 3); // correct > total
    }

    proptest! {
        #[test]
        fn priority_is_symmetric(g in 2u64..200, k in 0u64..200) {
            let k = k % (g + 1);
            let a = bernoulli_priority(g, k).unwrap();
            let b = bernoulli_priority(g, g - k).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn priority_in_range_and_peaks_at_half(g in 2u64..200) {
            let mut best = (0u64, -1.0f64);
            for k in 0..=g {
                let p = bernoulli_priority(g, k).unwrap();
                prop_assert!((0.0..=0.5).contains(&p));
                if p > best.1 {
                    best = (k, p);
                }
            }
            let half_lo = g / 2;
            let half_hi = g - half_lo;
            prop_assert!(best.0 == half_lo || best.0 == half_hi);
            // The 0.5 ceiling is attained only at (2, 1).
            if g > 2 {
                prop_assert!(best.1 < 0.5);
            }
        }
    }
}
