//! Verifier rewards and principle-group aggregation.
//!
//! The piecewise verifier pays 0.9 for a correct answer, 0.1 when only the
//! format is right, and 0 otherwise. For a group of problems sharing one
//! principle, rollout rewards are sorted within each problem and the mean at
//! each sorted position is taken across problems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::canonicalize_answer;
use crate::policy::Completion;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("reward values must satisfy correct >= format >= otherwise >= 0")]
    BadConfig,
    #[error("empty reward list")]
    EmptyRewards,
    #[error("empty principle group")]
    EmptyGroup,
    #[error("ragged group: problem {index} has {found} rollouts, expected {expected}")]
    RaggedGroup {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("reward {value} outside [0, {max}] in group {principle}")]
    OutOfRange {
        value: f64,
        max: f64,
        principle: String,
    },
}

/// How the two verifier signals combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Exactly one of {correct, format, otherwise} is paid.
    Piecewise,
    /// accuracy * correct_value + format * format_value.
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub correct_value: f64,
    pub format_value: f64,
    pub otherwise_value: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            correct_value: 0.9,
            format_value: 0.1,
            otherwise_value: 0.0,
            mode: RewardMode::Piecewise,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.correct_value >= self.format_value
            && self.format_value >= self.otherwise_value
            && self.otherwise_value >= 0.0
        {
            Ok(())
        } else {
            Err(RewardError::BadConfig)
        }
    }

    /// Largest reward the config can pay.
    pub fn max_value(&self) -> f64 {
        match self.mode {
            RewardMode::Piecewise => self.correct_value,
            RewardMode::Additive => self.correct_value + self.format_value,
        }
    }
}

/// Score one completion against the canonical answer.
pub fn score(completion: &Completion, answer: &str, cfg: &RewardConfig) -> f64 {
    let correct =
        completion.format_ok && canonicalize_answer(&completion.decoded_answer) == canonicalize_answer(answer);
    match cfg.mode {
        RewardMode::Piecewise => {
            if correct {
                cfg.correct_value
            } else if completion.format_ok {
                cfg.format_value
            } else {
                cfg.otherwise_value
            }
        }
        RewardMode::Additive => {
            let accuracy = if correct { cfg.correct_value } else { 0.0 };
            let format = if completion.format_ok {
                cfg.format_value
            } else {
                0.0
            };
            accuracy + format
        }
    }
}

/// Arithmetic mean of per-variant rewards.
pub fn mean_reward(rewards: &[f64]) -> Result<f64, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyRewards);
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Rollout rewards for every problem in one principle group; each inner
/// vector has the same length G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub principle_id: String,
    pub per_problem: Vec<Vec<f64>>,
}

impl GroupRewards {
    pub fn validate(&self, cfg: &RewardConfig) -> Result<(), RewardError> {
        if self.per_problem.is_empty() {
            return Err(RewardError::EmptyGroup);
        }
        let expected = self.per_problem[0].len();
        if expected == 0 {
            return Err(RewardError::EmptyRewards);
        }
        for (index, rewards) in self.per_problem.iter().enumerate() {
            if rewards.len() != expected {
                return Err(RewardError::RaggedGroup {
                    index,
                    found: rewards.len(),
                    expected,
                });
            }
            let max = cfg.max_value();
            for &value in rewards {
                if !(0.0..=max).contains(&value) {
                    return Err(RewardError::OutOfRange {
                        value,
                        max,
                        principle: self.principle_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Sort each problem's rollout rewards, then average across problems at each
/// sorted position. The output is non-decreasing and preserves the grand
/// mean.
pub fn rankwise_aggregate(group: &GroupRewards) -> Result<Vec<f64>, RewardError> {
    if group.per_problem.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let g = group.per_problem[0].len();
    if g == 0 {
        return Err(RewardError::EmptyRewards);
    }
    let mut sorted = Vec::with_capacity(group.per_problem.len());
    for (index, rewards) in group.per_problem.iter().enumerate() {
        if rewards.len() != g {
            return Err(RewardError::RaggedGroup {
                index,
                found: rewards.len(),
                expected: g,
            });
        }
        let mut row = rewards.clone();
        row.sort_by(f64::total_cmp);
        sorted.push(row);
    }
    let m = sorted.len() as f64;
    Ok((0..g)
        .map(|pos| sorted.iter().map(|row| row[pos]).sum::<f64>() / m)
        .collect())
}

/// Hand each rollout the aggregated value of its rank within its own
/// problem; ties break by rollout index.
pub fn assign_by_rank(per_problem: &[Vec<f64>], aggregated: &[f64]) -> Vec<Vec<f64>> {
    per_problem
        .iter()
        .map(|rewards| {
            let mut order: Vec<usize> = (0..rewards.len()).collect();
            order.sort_by(|&a, &b| {
                rewards[a]
                    .total_cmp(&rewards[b])
                    .then_with(|| a.cmp(&b))
            });
            let mut assigned = vec![0.0; rewards.len()];
            for (rank, &rollout) in order.iter().enumerate() {
                assigned[rollout] = aggregated[rank];
            }
            assigned
        })
        .collect()
}

/// One row of the reward trace written into the trainer run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardTraceRow {
    pub problem_id: String,
    pub rollout_idx: usize,
    pub raw: f64,
    pub aggregated: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn completion(answer: &str, format_ok: bool) -> Completion {
        Completion {
            tokens: vec![],
            per_token_logprob: vec![],
            decoded_answer: answer.to_string(),
            format_ok,
        }
    }

    #[test]
    fn piecewise_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(score(&completion("7", true), "7", &cfg), 0.9);
        assert_eq!(score(&completion("3", true), "7", &cfg), 0.1);
        assert_eq!(score(&completion("3", false), "7", &cfg), 0.0);
    }

    #[test]
    fn additive_cases() {
        let cfg = RewardConfig {
            mode: RewardMode::Additive,
            ..Default::default()
        };
        assert_eq!(score(&completion("7", true), "7", &cfg), 1.0);
        assert_eq!(score(&completion("3", true), "7", &cfg), 0.1);
        assert_eq!(score(&completion("3", false), "7", &cfg), 0.0);
    }

    #[test]
    fn score_canonicalizes() {
        let cfg = RewardConfig::default();
        assert_eq!(score(&completion("0.5", true), "0.50", &cfg), 0.9);
    }

    #[test]
    fn mean_reward_cases() {
        assert_eq!(mean_reward(&[0.9, 0.1]).unwrap(), 0.5);
        assert_eq!(mean_reward(&[0.9]).unwrap(), 0.9);
        assert_eq!(mean_reward(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(mean_reward(&[]), Err(RewardError::EmptyRewards)));
    }

    #[test]
    fn rankwise_worked_example() {
        let group = GroupRewards {
            principle_id: "p".into(),
            per_problem: vec![vec![0.9, 0.0, 0.1], vec![0.1, 0.9, 0.9]],
        };
        let out = rankwise_aggregate(&group).unwrap();
        assert_eq!(out, vec![0.05, 0.5, 0.9]);
    }

    #[test]
    fn rankwise_single_problem_is_sorted_vector() {
        let group = GroupRewards {
            principle_id: "p".into(),
            per_problem: vec![vec![0.9, 0.0, 0.1]],
        };
        assert_eq!(rankwise_aggregate(&group).unwrap(), vec![0.0, 0.1, 0.9]);
    }

    #[test]
    fn rankwise_identical_problems() {
        let group = GroupRewards {
            principle_id: "p".into(),
            per_problem: vec![vec![0.1, 0.9]; 4],
        };
        assert_eq!(rankwise_aggregate(&group).unwrap(), vec![0.1, 0.9]);
    }

    #[test]
    fn ragged_group_rejected() {
        let group = GroupRewards {
            principle_id: "p".into(),
            per_problem: vec![vec![0.1, 0.9], vec![0.5]],
        };
        assert!(matches!(
            rankwise_aggregate(&group),
            Err(RewardError::RaggedGroup { .. })
        ));
    }

    #[test]
    fn assign_by_rank_ties_break_by_index() {
        let per_problem = vec![vec![0.5, 0.5, 0.1]];
        let aggregated = vec![0.2, 0.6, 0.8];
        let assigned = assign_by_rank(&per_problem, &aggregated);
        // rollout 2 is the smallest; rollouts 0 and 1 tie, index order wins
        assert_eq!(assigned, vec![vec![0.6, 0.8, 0.2]]);
    }

    proptest! {
        #[test]
        fn rankwise_matches_brute_force(
            problems in proptest::collection::vec(
                proptest::collection::vec(0.0f64..=0.9, 1..=8), 1..=5),
            g_pick in 1usize..=8,
        ) {
            let g = 1 + g_pick % problems.iter().map(|p| p.len()).min().unwrap();
            let per_problem: Vec<Vec<f64>> = problems
                .iter()
                .map(|p| p.iter().cloned().cycle().take(g).collect())
                .collect();
            let group = GroupRewards { principle_id: "p".into(), per_problem: per_problem.clone() };
            let out = rankwise_aggregate(&group).unwrap();

            // brute force: explicit sort-and-average
            let mut expected = vec![0.0; g];
            let mut rows = Vec::new();
            for p in &per_problem {
                let mut row = p.clone();
                row.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rows.push(row);
            }
            for (pos, slot) in expected.iter_mut().enumerate() {
                let mut total = 0.0;
                for row in &rows {
                    total += row[pos];
                }
                *slot = total / rows.len() as f64;
            }
            prop_assert_eq!(&out, &expected);

            // monotone non-decreasing
            for w in out.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }

            // mean preservation
            let grand: f64 = per_problem.iter().flatten().sum::<f64>()
                / (per_problem.len() * g) as f64;
            let agg_mean: f64 = out.iter().sum::<f64>() / g as f64;
            prop_assert!((grand - agg_mean).abs() < 1e-12);
        }

        #[test]
        fn rankwise_permutation_invariant(
            base in proptest::collection::vec(
                proptest::collection::vec(0.0f64..=0.9, 4), 2..=4),
            swap_problem in 0usize..4,
        ) {
            let group = GroupRewards { principle_id: "p".into(), per_problem: base.clone() };
            let original = rankwise_aggregate(&group).unwrap();

            // shuffle rollouts within one problem and reverse problem order
            let mut permuted = base.clone();
            let idx = swap_problem % permuted.len();
            permuted[idx].reverse();
            permuted.reverse();
            let group = GroupRewards { principle_id: "p".into(), per_problem: permuted };
            let shuffled = rankwise_aggregate(&group).unwrap();
            for (a, b) in original.iter().zip(shuffled.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
