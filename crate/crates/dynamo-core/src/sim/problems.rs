//! Synthetic problem bank with verifiable binary rewards.
//!
//! A problem is a set of accepted token sequences of fixed length; a rollout
//! earns reward 1 exactly when it reproduces one of them. Target-set sizes
//! are drawn log-uniformly from {1, 2, 4, 8} so success probabilities under
//! the initial uniform policy span the variance spectrum.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::SimError;
use crate::ProblemId;

/// One problem: reward(o) = 1 iff o is in `targets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "id")]
    pub problem_id: ProblemId,
    pub targets: BTreeSet<Vec<usize>>,
}

impl ProblemSpec {
    pub fn contains(&self, sequence: &[usize]) -> bool {
        self.targets.contains(sequence)
    }

    fn validate(&self, vocab_size: usize, seq_len: usize) -> Result<(), SimError> {
        if self.targets.is_empty() {
            return Err(SimError::InvalidBank(format!(
                "problem {} has no targets",
                self.problem_id
            )));
        }
        for target in &self.targets {
            if target.len() != seq_len {
                return Err(SimError::InvalidBank(format!(
                    "problem {} target length {} != seq_len {}",
                    self.problem_id,
                    target.len(),
                    seq_len
                )));
            }
            if target.iter().any(|t| *t >= vocab_size) {
                return Err(SimError::InvalidBank(format!(
                    "problem {} target token out of vocab range {}",
                    self.problem_id, vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// A full bank. Serializes as
/// `{"vocab_size": V, "seq_len": T, "problems": [{"id": .., "targets": [[..]]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemBank {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub problems: Vec<ProblemSpec>,
}

impl ProblemBank {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.problems.is_empty() {
            return Err(SimError::InvalidBank("bank has no problems".into()));
        }
        let mut seen = BTreeSet::new();
        for problem in &self.problems {
            if !seen.insert(&problem.problem_id) {
                return Err(SimError::InvalidBank(format!(
                    "duplicate problem id {}",
                    problem.problem_id
                )));
            }
            problem.validate(self.vocab_size, self.seq_len)?;
        }
        Ok(())
    }

    /// Synthesizes a bank with heterogeneous target-set sizes (log-uniform
    /// over {1, 2, 4, 8}, capped at the sequence space size).
    pub fn generate(
        vocab_size: usize,
        seq_len: usize,
        n_problems: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let space: u64 = (vocab_size as u64)
            .checked_pow(seq_len as u32)
            .unwrap_or(u64::MAX);
        let problems = (0..n_problems)
            .map(|idx| {
                let exponent = rng.gen_range(0u32..4);
                let size = (1u64 << exponent).min(space) as usize;
                let mut targets = BTreeSet::new();
                while targets.len() < size {
                    let seq: Vec<usize> =
                        (0..seq_len).map(|_| rng.gen_range(0..vocab_size)).collect();
                    targets.insert(seq);
                }
                ProblemSpec {
                    problem_id: ProblemId::new(format!("prob{idx:03}")),
                    targets,
                }
            })
            .collect();
        ProblemBank {
            vocab_size,
            seq_len,
            problems,
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, SimError> {
        let bank: ProblemBank =
            serde_json::from_reader(reader).map_err(|e| SimError::InvalidBank(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), SimError> {
        serde_json::to_writer_pretty(writer, self).map_err(|e| SimError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::bank_rng;

    #[test]
    fn generated_bank_is_valid_and_deterministic() {
        let a = ProblemBank::generate(8, 4, 20, &mut bank_rng(5));
        a.validate().unwrap();
        let b = ProblemBank::generate(8, 4, 20, &mut bank_rng(5));
        assert_eq!(a, b);
        let sizes: BTreeSet<usize> = a.problems.iter().map(|p| p.targets.len()).collect();
        assert!(sizes.len() > 1, "target-set sizes should vary: {sizes:?}");
        assert!(sizes.iter().all(|s| [1, 2, 4, 8].contains(s)));
    }

    #[test]
    fn small_space_caps_target_sets() {
        let bank = ProblemBank::generate(2, 1, 10, &mut bank_rng(1));
        bank.validate().unwrap();
        assert!(bank.problems.iter().all(|p| p.targets.len() <= 2));
    }

    #[test]
    fn json_roundtrip_matches_schema() {
        let bank = ProblemBank::generate(4, 2, 3, &mut bank_rng(9));
        let json = serde_json::to_string(&bank).unwrap();
        assert!(json.contains("\"vocab_size\":4"));
        assert!(json.contains("\"seq_len\":2"));
        assert!(json.contains("\"problems\""));
        assert!(json.contains("\"id\":\"prob000\""));
        assert!(json.contains("\"targets\""));
        let back = ProblemBank::from_reader(json.as_bytes()).unwrap();
        assert_eq!(back, bank);
    }

    #[test]
    fn invalid_banks_rejected() {
        let mut bank = ProblemBank::generate(4, 2, 2, &mut bank_rng(3));
        bank.problems[0].targets.insert(vec![9, 0]);
        assert!(bank.validate().is_err());

        let mut bank = ProblemBank::generate(4, 2, 2, &mut bank_rng(3));
        bank.problems[1].problem_id = bank.problems[0].problem_id.clone();
        assert!(bank.validate().is_err());

        let mut bank = ProblemBank::generate(4, 2, 2, &mut bank_rng(3));
        bank.problems[0].targets.clear();
        assert!(bank.validate().is_err());
    }
}
