//! Training loops: the SFT cold start and the GRPO stage driver.
//!
//! One outer step snapshots the old policy, samples G rollouts per problem,
//! scores them (optionally rank-aggregating across the problem group), and
//! applies a single first-order update. Everything is seeded; the same seed
//! yields byte-identical metrics.

use serde::{Deserialize, Serialize};

use crate::grpo::{grpo_loss, GrpoConfig, Optimizer, RolloutBatch, TrainError};
use crate::policy::{
    logprob, sample, sft_loss, target_completion, PolicyParams, SampleParams, SyntheticTask,
};
use crate::reward::{
    assign_by_rank, rankwise_aggregate, score, GroupRewards, RewardConfig, RewardTraceRow,
};
use crate::rng::subseed;

/// Reward stages applied to raw verifier scores before advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPipeline {
    pub config: RewardConfig,
    /// Apply the sort-then-position-mean aggregation across the group.
    pub rankwise: bool,
    /// Principle id recorded in traces when the group represents one.
    pub principle_id: Option<String>,
}

impl Default for RewardPipeline {
    fn default() -> Self {
        RewardPipeline {
            config: RewardConfig::default(),
            rankwise: false,
            principle_id: None,
        }
    }
}

/// Per-step metrics written to the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Outcome of a GRPO stage run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_mean_reward: f64,
    pub steps: Vec<StepMetrics>,
    pub samples_consumed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reward_trace: Vec<RewardTraceRow>,
}

impl TrainReport {
    pub fn final_mean_reward(&self) -> f64 {
        self.steps
            .last()
            .map(|m| m.mean_reward)
            .unwrap_or(self.initial_mean_reward)
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sample and score one problem group without updating, for the initial
/// metric.
fn measure_mean_reward(
    policy: &PolicyParams,
    tasks: &[SyntheticTask],
    sp: &SampleParams,
    pipeline: &RewardPipeline,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for task in tasks {
        let completions = sample(policy, task, sp, subseed(seed, &["measure", &task.id]))?;
        for completion in &completions {
            total += score(completion, &task.correct_answer, &pipeline.config);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Run `steps` GRPO iterations over a problem group. With `steps == 0` the
/// report carries only the initial metric and the policy is untouched.
pub fn train_stage(
    policy: &mut PolicyParams,
    ref_params: &PolicyParams,
    tasks: &[SyntheticTask],
    cfg: &GrpoConfig,
    sp: &SampleParams,
    pipeline: &RewardPipeline,
    steps: u64,
    seed: u64,
) -> Result<TrainReport, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    cfg.validate()?;
    pipeline.config.validate()?;
    let mut report = TrainReport {
        initial_mean_reward: measure_mean_reward(policy, tasks, sp, pipeline, seed)?,
        ..Default::default()
    };
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, policy.param_count());

    for step in 0..steps {
        let step_label = step.to_string();
        let old_policy = policy.clone();

        // rollouts under the frozen old policy
        let mut completions_per_task = Vec::with_capacity(tasks.len());
        let mut raw_rewards = Vec::with_capacity(tasks.len());
        for task in tasks {
            let completions = sample(
                &old_policy,
                task,
                sp,
                subseed(seed, &["step", &step_label, "problem", &task.id]),
            )?;
            let rewards: Vec<f64> = completions
                .iter()
                .map(|c| score(c, &task.correct_answer, &pipeline.config))
                .collect();
            completions_per_task.push(completions);
            raw_rewards.push(rewards);
        }
        report.samples_consumed += (tasks.len() * sp.group_size) as u64;

        let effective_rewards = if pipeline.rankwise {
            let group = GroupRewards {
                principle_id: pipeline.principle_id.clone().unwrap_or_default(),
                per_problem: raw_rewards.clone(),
            };
            group.validate(&pipeline.config)?;
            let aggregated = rankwise_aggregate(&group)?;
            assign_by_rank(&raw_rewards, &aggregated)
        } else {
            raw_rewards.clone()
        };

        for (t, task) in tasks.iter().enumerate() {
            for rollout_idx in 0..raw_rewards[t].len() {
                report.reward_trace.push(RewardTraceRow {
                    problem_id: task.id.clone(),
                    rollout_idx,
                    raw: raw_rewards[t][rollout_idx],
                    aggregated: effective_rewards[t][rollout_idx],
                });
            }
        }

        let mut batches = Vec::with_capacity(tasks.len());
        for ((task, completions), rewards) in tasks
            .iter()
            .zip(completions_per_task)
            .zip(effective_rewards)
        {
            let logprobs_old: Vec<Vec<f64>> = completions
                .iter()
                .map(|c| c.per_token_logprob.clone())
                .collect();
            let logprobs_ref: Vec<Vec<f64>> = completions
                .iter()
                .map(|c| logprob(ref_params, task, &c.tokens, sp.temperature))
                .collect::<Result<_, _>>()?;
            batches.push(RolloutBatch {
                task: task.clone(),
                completions,
                rewards,
                logprobs_old,
                logprobs_ref,
                temperature: sp.temperature,
            });
        }

        let (loss, grad, metrics) = grpo_loss(policy, ref_params, &batches, cfg)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let grad_norm = l2_norm(&grad);
        optimizer.apply(policy, &grad)?;

        let mean_reward = {
            let total: f64 = raw_rewards.iter().flatten().sum();
            let count: usize = raw_rewards.iter().map(Vec::len).sum();
            total / count as f64
        };
        report.steps.push(StepMetrics {
            step,
            mean_reward,
            loss,
            kl: metrics.kl,
            clip_fraction: metrics.clip_fraction,
            grad_norm,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: u64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub optimizer: crate::grpo::OptimizerKind,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            learning_rate: 1e-5,
            epochs: 1,
            warmup_ratio: 0.1,
            batch_size: 8,
            optimizer: crate::grpo::OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftStepMetrics {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SftReport {
    pub steps: Vec<SftStepMetrics>,
    pub samples_consumed: u64,
}

impl SftReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|m| m.loss)
    }
}

/// Supervised cold start: shuffled mini-batches with linear warmup.
pub fn train_sft(
    policy: &mut PolicyParams,
    pairs: &[(SyntheticTask, Vec<usize>)],
    cfg: &SftConfig,
    seed: u64,
) -> Result<SftReport, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoTasks);
    }
    let batch_size = cfg.batch_size.max(1);
    let batches_per_epoch = pairs.len().div_ceil(batch_size);
    let total_steps = (cfg.epochs as usize * batches_per_epoch).max(1) as f64;
    let warmup_steps = (cfg.warmup_ratio * total_steps).floor().max(0.0);

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, policy.param_count());
    let mut report = SftReport::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let epoch_label = epoch.to_string();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        shuffle(&mut order, subseed(seed, &["sft-epoch", &epoch_label]));
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(SyntheticTask, Vec<usize>)> = chunk
                .iter()
                .map(|&i| (pairs[i].0.clone(), pairs[i].1.clone()))
                .collect();
            let (loss, grad) = sft_loss(policy, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            let lr = if (step as f64) < warmup_steps {
                cfg.learning_rate * (step as f64 + 1.0) / warmup_steps.max(1.0)
            } else {
                cfg.learning_rate
            };
            optimizer.set_learning_rate(lr);
            optimizer.apply(policy, &grad)?;
            report.steps.push(SftStepMetrics {
                step,
                loss,
                learning_rate: lr,
            });
            report.samples_consumed += batch.len() as u64;
            step += 1;
        }
    }
    Ok(report)
}

/// Build (task, target) pairs for supervised training.
pub fn sft_pairs(
    policy_cfg: &crate::policy::PolicyConfig,
    tasks: &[SyntheticTask],
) -> Vec<(SyntheticTask, Vec<usize>)> {
    tasks
        .iter()
        .map(|task| {
            (
                task.clone(),
                target_completion(policy_cfg, &task.correct_answer),
            )
        })
        .collect()
}

fn shuffle(order: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut rng = crate::rng::substream(seed, &["shuffle"]);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DifficultyCoordinate;
    use crate::grpo::OptimizerKind;
    use crate::policy::{task_for_answer, PolicyConfig};

    fn group_tasks() -> Vec<SyntheticTask> {
        ["2", "7", "4"]
            .iter()
            .enumerate()
            .map(|(i, a)| {
                task_for_answer(&format!("p{i}"), a, DifficultyCoordinate::seed(), 9)
            })
            .collect()
    }

    #[test]
    fn zero_steps_is_noop() {
        let mut policy = PolicyParams::init(PolicyConfig::default(), 0.1, 1).unwrap();
        let reference = policy.clone();
        let report = train_stage(
            &mut policy,
            &reference,
            &group_tasks(),
            &GrpoConfig::default(),
            &SampleParams {
                group_size: 4,
                max_len: 16,
                ..Default::default()
            },
            &RewardPipeline::default(),
            0,
            5,
        )
        .unwrap();
        assert!(report.steps.is_empty());
        assert_eq!(policy, reference);
        assert!(report.initial_mean_reward >= 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut policy = PolicyParams::init(PolicyConfig::default(), 0.1, 2).unwrap();
            let reference = policy.clone();
            let report = train_stage(
                &mut policy,
                &reference,
                &group_tasks(),
                &GrpoConfig {
                    learning_rate: 0.05,
                    optimizer: OptimizerKind::Adam,
                    ..Default::default()
                },
                &SampleParams {
                    group_size: 4,
                    max_len: 16,
                    ..Default::default()
                },
                &RewardPipeline {
                    rankwise: true,
                    principle_id: Some("pr".into()),
                    ..Default::default()
                },
                5,
                77,
            )
            .unwrap();
            (policy, serde_json::to_string(&report.steps).unwrap())
        };
        let (p1, m1) = run();
        let (p2, m2) = run();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn huge_beta_pins_params_to_reference() {
        let policy_cfg = PolicyConfig::default();
        let reference = PolicyParams::init(policy_cfg, 0.1, 3).unwrap();
        let sp = SampleParams {
            group_size: 4,
            max_len: 16,
            ..Default::default()
        };
        let run = |beta: f64| {
            let mut policy = reference.clone();
            train_stage(
                &mut policy,
                &reference,
                &group_tasks(),
                &GrpoConfig {
                    beta,
                    learning_rate: 0.05,
                    optimizer: OptimizerKind::Sgd,
                    ..Default::default()
                },
                &sp,
                &RewardPipeline::default(),
                50,
                11,
            )
            .unwrap();
            let dist: f64 = policy
                .theta()
                .iter()
                .zip(reference.theta().iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist
        };
        let drift_free = run(0.0);
        let drift_pinned = run(1e3);
        assert!(
            drift_pinned < drift_free / 5.0,
            "beta=0 drift {drift_free}, beta=1e3 drift {drift_pinned}"
        );
        assert!(drift_pinned < 1e-3, "pinned drift {drift_pinned}");
    }

    #[test]
    fn sft_fits_toy_targets() {
        let policy_cfg = PolicyConfig::default();
        let mut policy = PolicyParams::init(policy_cfg, 0.1, 4).unwrap();
        let tasks = group_tasks();
        let pairs = sft_pairs(&policy_cfg, &tasks);
        let report = train_sft(
            &mut policy,
            &pairs,
            &SftConfig {
                learning_rate: 0.05,
                epochs: 300,
                optimizer: OptimizerKind::Adam,
                ..Default::default()
            },
            13,
        )
        .unwrap();
        let first = report.steps.first().unwrap().loss;
        let last = report.final_loss().unwrap();
        assert!(last < first / 4.0, "first {first}, last {last}");
        // warmup ramps the learning rate
        assert!(report.steps[0].learning_rate < 0.05);
    }
}
