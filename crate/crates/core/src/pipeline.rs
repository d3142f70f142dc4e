//! Run orchestration: configuration, the three-stage pipeline, and the run
//! manifest.
//!
//! A run is fully determined by (config, seed, corpus). Every stage reads the
//! same resolved config, all randomness flows through named seed streams, and
//! metrics logs contain no timestamps, so identical runs produce identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ingest_corpus, Corpus, CorpusError, GROUPS_FILE, LATTICES_FILE, PROBLEMS_FILE};
use crate::fixtures;
use crate::grpo::{GrpoConfig, KlEstimator, OptimizerKind, TrainError};
use crate::knowledge::{load_hierarchy, KnowledgeError, KnowledgeHierarchy};
use crate::policy::{PolicyConfig, PolicyError, PolicyParams, SampleParams, SyntheticTask};
use crate::reward::{RewardConfig, RewardMode};
use crate::rng::subseed;
use crate::scheduler::{
    run_curriculum, PolicyAttemptEngine, SchedulerConfig, SchedulerError,
};
use crate::trainer::{sft_pairs, train_sft, train_stage, RewardPipeline, SftConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SFT_LOG_FILE: &str = "sft_log.jsonl";
pub const PRE_LOG_FILE: &str = "pre_log.jsonl";
pub const DYN_LOG_FILE: &str = "dyn_log.jsonl";
pub const REWARD_TRACE_FILE: &str = "rewards.jsonl";
pub const DYN_TRACE_FILE: &str = "dyn_trace.jsonl";
pub const SFT_CHECKPOINT: &str = "ckpt_sft.json";
pub const PRE_CHECKPOINT: &str = "ckpt_pre.json";
pub const DYN_CHECKPOINT: &str = "ckpt_dyn.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failed to read config {path}: {source}")]
    ConfigIo {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    ConfigParse(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("pre-aligned stage requires initial checkpoint")]
    MissingCheckpoint,
    #[error("corpus directory given without a hierarchy file")]
    MissingHierarchy,
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("io failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl PipelineError {
    /// Validation problems exit 1; runtime aborts exit 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, PipelineError::StageFailed { .. } | PipelineError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sft,
    Pre,
    Dyn,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Sft => write!(f, "sft"),
            Stage::Pre => write!(f, "pre"),
            Stage::Dyn => write!(f, "dyn"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sft" => Ok(Stage::Sft),
            "pre" => Ok(Stage::Pre),
            "dyn" => Ok(Stage::Dyn),
            other => Err(format!("unknown stage {other:?} (expected sft|pre|dyn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let cfg = PolicyConfig::default();
        PolicySection {
            vocab_size: cfg.vocab_size,
            feature_dim: cfg.feature_dim,
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            init_scale: 0.1,
        }
    }
}

impl PolicySection {
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftSection {
    pub learning_rate: f64,
    pub epochs: u64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection {
            learning_rate: 1e-5,
            epochs: 1,
            warmup_ratio: 0.1,
            batch_size: 8,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl SftSection {
    fn sft_config(&self) -> SftConfig {
        SftConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            warmup_ratio: self.warmup_ratio,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    pub correct: f64,
    pub format: f64,
    pub otherwise: f64,
    pub mode: RewardMode,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            correct: 0.9,
            format: 0.1,
            otherwise: 0.0,
            mode: RewardMode::Piecewise,
        }
    }
}

impl RewardSection {
    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            correct_value: self.correct,
            format_value: self.format,
            otherwise_value: self.otherwise,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlSection {
    pub learning_rate: f64,
    pub temperature: f64,
    pub group_size: usize,
    pub max_len: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub advantage_epsilon: f64,
    pub kl_estimator: KlEstimator,
    pub optimizer: OptimizerKind,
    pub reward: RewardSection,
}

impl Default for RlSection {
    fn default() -> Self {
        RlSection {
            learning_rate: 1e-6,
            temperature: 1.0,
            group_size: 8,
            max_len: 1024,
            epsilon: 0.2,
            beta: 0.04,
            advantage_epsilon: 1e-8,
            kl_estimator: KlEstimator::K3,
            optimizer: OptimizerKind::Sgd,
            reward: RewardSection::default(),
        }
    }
}

impl RlSection {
    pub fn grpo_config(&self) -> GrpoConfig {
        GrpoConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            group_size: self.group_size,
            learning_rate: self.learning_rate,
            advantage_epsilon: self.advantage_epsilon,
            kl_estimator: self.kl_estimator,
            optimizer: self.optimizer,
        }
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            group_size: self.group_size,
            temperature: self.temperature,
            max_len: self.max_len,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Supervised pairs for the cold start.
    pub sft_size: u64,
    /// Rollout-sample budget for the pre-aligned stage.
    pub pre_size: u64,
    /// Rollout-sample budget for the dynamic stage.
    pub dyn_size: u64,
    /// Lattices synthesized when no corpus directory is given.
    pub lattices: usize,
    /// Members per image-variant group in the synthesized corpus.
    pub variants_per_group: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            sft_size: 1000,
            pre_size: 5800,
            dyn_size: 4000,
            lattices: 4,
            variants_per_group: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerSection {
    pub pass_threshold: f64,
    pub max_reattempts: u32,
    pub increment_steps: u32,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            pass_threshold: 0.5,
            max_reattempts: 2,
            increment_steps: 20,
        }
    }
}

/// Resolved run configuration; TOML on disk, overridable via MATHBOOK_
/// environment variables (double underscore separates section and key).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy_path: Option<PathBuf>,
    pub policy: PolicySection,
    pub sft: SftSection,
    pub rl: RlSection,
    pub data: DataSection,
    pub scheduler: SchedulerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            corpus_dir: None,
            hierarchy_path: None,
            policy: PolicySection::default(),
            sft: SftSection::default(),
            rl: RlSection::default(),
            data: DataSection::default(),
            scheduler: SchedulerSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Parse TOML and apply MATHBOOK_ environment overrides, e.g.
    /// MATHBOOK_SEED=7 or MATHBOOK_RL__LEARNING_RATE=0.05.
    pub fn from_toml_with_env(
        text: &str,
        env: impl Iterator<Item = (String, String)>,
    ) -> Result<Self, PipelineError> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| PipelineError::ConfigParse(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env
            .filter_map(|(key, val)| {
                key.strip_prefix("MATHBOOK_")
                    .map(|rest| (rest.to_lowercase(), val))
            })
            .collect();
        overrides.sort();
        for (path, raw) in overrides {
            let parsed: toml::Value = format!("v = {raw}")
                .parse::<toml::Value>()
                .ok()
                .and_then(|t| t.get("v").cloned())
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            let mut cursor = &mut value;
            let parts: Vec<&str> = path.split("__").collect();
            for part in &parts[..parts.len() - 1] {
                let table = cursor
                    .as_table_mut()
                    .ok_or_else(|| PipelineError::ConfigParse(format!("{path} is not a table")))?;
                cursor = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            let table = cursor
                .as_table_mut()
                .ok_or_else(|| PipelineError::ConfigParse(format!("{path} is not a table")))?;
            table.insert(parts[parts.len() - 1].to_string(), parsed);
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |msg: &str| Err(PipelineError::ConfigInvalid(msg.to_string()));
        if self.sft.learning_rate <= 0.0 || self.rl.learning_rate <= 0.0 {
            return invalid("learning rates must be positive");
        }
        if self.rl.temperature <= 0.0 {
            return invalid("temperature must be positive");
        }
        if self.rl.group_size < 2 {
            return invalid("group size must be at least 2");
        }
        if self.rl.max_len < 1 {
            return invalid("max_len must be at least 1");
        }
        if self.data.sft_size == 0 || self.data.pre_size == 0 || self.data.dyn_size == 0 {
            return invalid("data sizes must be positive");
        }
        if self.data.lattices == 0 {
            return invalid("lattice count must be positive");
        }
        if !(self.scheduler.pass_threshold > 0.0 && self.scheduler.pass_threshold <= 1.0) {
            return invalid("pass_threshold must be in (0,1]");
        }
        if self.scheduler.max_reattempts < 1 {
            return invalid("max_reattempts must be at least 1");
        }
        self.policy
            .policy_config()
            .validate()
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        self.rl
            .reward
            .reward_config()
            .validate()
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            pass_threshold: self.scheduler.pass_threshold,
            max_reattempts: self.scheduler.max_reattempts,
            increment_steps: self.scheduler.increment_steps,
            correct_value: self.rl.reward.correct,
        }
    }
}

/// Stage result recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub steps: u64,
    pub samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mean_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_mean_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    pub checkpoint: String,
    pub checkpoint_hash: String,
}

/// Immutable record of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub corpus_hash: String,
    pub lineage: Vec<Stage>,
    pub stages: Vec<StageSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub skip: Vec<Stage>,
    pub initial_checkpoint: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("serialize row");
        out.push(b'\n');
    }
    write_file(path, &out)
}

fn stage_error<E: std::error::Error + Send + Sync + 'static>(
    stage: Stage,
) -> impl FnOnce(E) -> PipelineError {
    move |source| PipelineError::StageFailed {
        stage,
        source: Box::new(source),
    }
}

/// Corpus plus derived tasks, either synthesized or loaded from disk.
pub struct PreparedCorpus {
    pub corpus: Corpus,
    pub tasks: BTreeMap<String, SyntheticTask>,
    pub hash: String,
}

/// Load or synthesize the corpus; the hash covers the three canonical files.
pub fn prepare_corpus(
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<(KnowledgeHierarchy, PreparedCorpus), PipelineError> {
    let (store, corpus) = match &cfg.corpus_dir {
        Some(dir) => {
            let hierarchy_path = cfg
                .hierarchy_path
                .as_ref()
                .ok_or(PipelineError::MissingHierarchy)?;
            let (store, _) = load_hierarchy(hierarchy_path)?;
            let corpus = ingest_corpus(dir, &store)?;
            (store, corpus)
        }
        None => {
            let store = fixtures::full_hierarchy();
            let built = fixtures::synthetic_corpus(
                &store,
                cfg.data.lattices,
                cfg.data.variants_per_group,
                subseed(cfg.seed, &["corpus"]),
            )?;
            (store, built.corpus)
        }
    };
    // tasks derive from problems the same way for both sources
    let tasks: BTreeMap<String, SyntheticTask> = corpus
        .problems()
        .map(|p| (p.id.clone(), fixtures::task_for_problem(p, cfg.seed)))
        .collect();

    let corpus_copy = run_dir.join("corpus");
    corpus.write_dir(&corpus_copy)?;
    let mut hasher = Sha256::new();
    for file in [PROBLEMS_FILE, GROUPS_FILE, LATTICES_FILE] {
        let path = corpus_copy.join(file);
        let bytes = std::fs::read(&path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        hasher.update(&bytes);
    }
    let hash = hex::encode(hasher.finalize());
    Ok((
        store,
        PreparedCorpus {
            corpus,
            tasks,
            hash,
        },
    ))
}

/// Execute the requested stages in order, threading checkpoints.
pub fn run_pipeline(
    cfg: &RunConfig,
    options: &PipelineOptions,
) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let run_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&run_dir).map_err(|source| PipelineError::Io {
        path: run_dir.display().to_string(),
        source,
    })?;
    let resolved = cfg.to_toml();
    write_file(&run_dir.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;
    let config_hash = sha256_hex(resolved.as_bytes());

    let (_store, prepared) = prepare_corpus(cfg, &run_dir)?;
    let policy_cfg = cfg.policy.policy_config();

    let run_sft = !options.skip.contains(&Stage::Sft);
    let run_pre = !options.skip.contains(&Stage::Pre);
    let run_dyn = !options.skip.contains(&Stage::Dyn);

    let mut stages = Vec::new();
    let mut lineage = Vec::new();

    // initial policy: fresh init, or the provided checkpoint when the cold
    // start is skipped
    let mut policy = if run_sft {
        PolicyParams::init(policy_cfg, cfg.policy.init_scale, subseed(cfg.seed, &["init"]))?
    } else {
        let path = options
            .initial_checkpoint
            .as_ref()
            .ok_or(PipelineError::MissingCheckpoint)?;
        PolicyParams::load(path)?
    };

    let ordered_tasks: Vec<SyntheticTask> = prepared.tasks.values().cloned().collect();

    if run_sft {
        let wanted = cfg.data.sft_size as usize;
        let tasks: Vec<SyntheticTask> = ordered_tasks.iter().cloned().cycle().take(wanted).collect();
        let pairs = sft_pairs(&policy_cfg, &tasks);
        let report = train_sft(
            &mut policy,
            &pairs,
            &cfg.sft.sft_config(),
            subseed(cfg.seed, &["sft"]),
        )
        .map_err(stage_error(Stage::Sft))?;
        write_jsonl(&run_dir.join(SFT_LOG_FILE), &report.steps)?;
        let ckpt = run_dir.join(SFT_CHECKPOINT);
        policy.save(&ckpt)?;
        stages.push(StageSummary {
            stage: Stage::Sft,
            steps: report.steps.len() as u64,
            samples: report.samples_consumed,
            initial_mean_reward: None,
            final_mean_reward: None,
            final_loss: report.final_loss(),
            checkpoint: SFT_CHECKPOINT.to_string(),
            checkpoint_hash: checkpoint_hash(&ckpt)?,
        });
        lineage.push(Stage::Sft);
    }

    // the reference policy is the post-cold-start snapshot
    let ref_params = policy.clone();

    if run_pre {
        let groups = prepared.corpus.principle_groups();
        let mut metrics = Vec::new();
        let mut reward_rows = Vec::new();
        let mut samples = 0u64;
        let mut initial = None;
        let grpo_cfg = cfg.rl.grpo_config();
        let sampling = cfg.rl.sample_params();
        let mut round = 0u64;
        'budget: loop {
            let round_label = round.to_string();
            for (principle, members) in &groups {
                if samples >= cfg.data.pre_size {
                    break 'budget;
                }
                let tasks: Vec<SyntheticTask> = members
                    .iter()
                    .filter_map(|id| prepared.tasks.get(id).cloned())
                    .collect();
                if tasks.is_empty() {
                    continue;
                }
                let pipeline = RewardPipeline {
                    config: cfg.rl.reward.reward_config(),
                    rankwise: true,
                    principle_id: Some(principle.clone()),
                };
                let report = train_stage(
                    &mut policy,
                    &ref_params,
                    &tasks,
                    &grpo_cfg,
                    &sampling,
                    &pipeline,
                    1,
                    subseed(cfg.seed, &["pre", &round_label, principle]),
                )
                .map_err(stage_error(Stage::Pre))?;
                if initial.is_none() {
                    initial = Some(report.initial_mean_reward);
                }
                samples += report.samples_consumed;
                for mut m in report.steps {
                    m.step = metrics.len() as u64;
                    metrics.push(m);
                }
                reward_rows.extend(report.reward_trace);
            }
            if groups.is_empty() {
                break;
            }
            round += 1;
        }
        write_jsonl(&run_dir.join(PRE_LOG_FILE), &metrics)?;
        write_jsonl(&run_dir.join(REWARD_TRACE_FILE), &reward_rows)?;
        let ckpt = run_dir.join(PRE_CHECKPOINT);
        policy.save(&ckpt)?;
        stages.push(StageSummary {
            stage: Stage::Pre,
            steps: metrics.len() as u64,
            samples,
            initial_mean_reward: initial,
            final_mean_reward: metrics.last().map(|m| m.mean_reward),
            final_loss: metrics.last().map(|m| m.loss),
            checkpoint: PRE_CHECKPOINT.to_string(),
            checkpoint_hash: checkpoint_hash(&ckpt)?,
        });
        lineage.push(Stage::Pre);
    }

    if run_dyn {
        let grpo_cfg = cfg.rl.grpo_config();
        let sampling = cfg.rl.sample_params();
        let scheduler_cfg = cfg.scheduler_config();
        let mut engine = PolicyAttemptEngine::new(
            policy.clone(),
            ref_params.clone(),
            &prepared.tasks,
            grpo_cfg,
            sampling,
            cfg.rl.reward.reward_config(),
            subseed(cfg.seed, &["dyn"]),
        );
        let mut events = Vec::new();
        let lattice_ids: Vec<String> =
            prepared.corpus.lattices().map(|l| l.seed_id.clone()).collect();
        for lattice_id in &lattice_ids {
            if engine.samples_consumed >= cfg.data.dyn_size {
                break;
            }
            let lattice = prepared.corpus.lattice(lattice_id).expect("known lattice");
            let trace = run_curriculum(
                &[lattice],
                &prepared.corpus,
                &mut engine,
                &scheduler_cfg,
            )
            .map_err(stage_error(Stage::Dyn))?;
            let base = events.len() as u64;
            for mut event in trace.events {
                event.step += base;
                events.push(event);
            }
        }
        let samples = engine.samples_consumed;
        let metrics: Vec<crate::trainer::StepMetrics> = engine
            .increment_metrics
            .iter()
            .enumerate()
            .map(|(i, m)| crate::trainer::StepMetrics {
                step: i as u64,
                ..m.clone()
            })
            .collect();
        policy = engine.into_policy();
        write_jsonl(&run_dir.join(DYN_TRACE_FILE), &events)?;
        write_jsonl(&run_dir.join(DYN_LOG_FILE), &metrics)?;
        let ckpt = run_dir.join(DYN_CHECKPOINT);
        policy.save(&ckpt)?;
        stages.push(StageSummary {
            stage: Stage::Dyn,
            steps: events.len() as u64,
            samples,
            initial_mean_reward: None,
            final_mean_reward: metrics.last().map(|m| m.mean_reward),
            final_loss: metrics.last().map(|m| m.loss),
            checkpoint: DYN_CHECKPOINT.to_string(),
            checkpoint_hash: checkpoint_hash(&ckpt)?,
        });
        lineage.push(Stage::Dyn);
    }

    let manifest = RunManifest {
        config_hash,
        corpus_hash: prepared.hash,
        lineage,
        stages,
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&run_dir.join(MANIFEST_FILE), manifest_text.as_bytes())?;
    Ok(manifest)
}

fn checkpoint_hash(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            seed: 11,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        };
        cfg.policy.hidden_dim = 12;
        cfg.sft.learning_rate = 0.05;
        cfg.sft.epochs = 4;
        cfg.sft.optimizer = OptimizerKind::Adam;
        cfg.rl.learning_rate = 0.05;
        cfg.rl.optimizer = OptimizerKind::Adam;
        cfg.rl.max_len = 16;
        cfg.data.sft_size = 16;
        cfg.data.pre_size = 96;
        cfg.data.dyn_size = 300;
        cfg.data.lattices = 1;
        cfg.scheduler.increment_steps = 2;
        cfg
    }

    #[test]
    fn config_round_trip_and_env_overrides() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let parsed = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, parsed);

        let env = vec![
            ("MATHBOOK_SEED".to_string(), "99".to_string()),
            ("MATHBOOK_RL__LEARNING_RATE".to_string(), "0.5".to_string()),
            (
                "MATHBOOK_RL__REWARD__MODE".to_string(),
                "\"additive\"".to_string(),
            ),
            ("MATHBOOK_DATA__SFT_SIZE".to_string(), "7".to_string()),
            ("IGNORED".to_string(), "x".to_string()),
        ];
        let parsed = RunConfig::from_toml_with_env(&text, env.into_iter()).unwrap();
        assert_eq!(parsed.seed, 99);
        assert_eq!(parsed.rl.learning_rate, 0.5);
        assert_eq!(parsed.rl.reward.mode, RewardMode::Additive);
        assert_eq!(parsed.data.sft_size, 7);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = RunConfig::default();
        cfg.rl.group_size = 1;
        assert!(matches!(
            cfg.validate(),
            Err(PipelineError::ConfigInvalid(_))
        ));
        let err = RunConfig::from_toml("rl = { temperature = -1.0 }").unwrap_err();
        assert!(matches!(err, PipelineError::ConfigInvalid(_)));
    }

    #[test]
    fn skip_sft_requires_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let err = run_pipeline(
            &cfg,
            &PipelineOptions {
                skip: vec![Stage::Sft],
                initial_checkpoint: None,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires initial checkpoint"));
        assert!(err.is_validation());
    }

    #[test]
    fn pipeline_produces_manifest_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let manifest = run_pipeline(&cfg, &PipelineOptions::default()).unwrap();
        assert_eq!(
            manifest.lineage,
            vec![Stage::Sft, Stage::Pre, Stage::Dyn]
        );
        assert_eq!(manifest.stages.len(), 3);
        for file in [
            RESOLVED_CONFIG_FILE,
            MANIFEST_FILE,
            SFT_LOG_FILE,
            PRE_LOG_FILE,
            REWARD_TRACE_FILE,
            DYN_TRACE_FILE,
            SFT_CHECKPOINT,
            PRE_CHECKPOINT,
            DYN_CHECKPOINT,
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        // resolved config read-back equals the in-memory config
        let resolved =
            RunConfig::load(&dir.path().join(RESOLVED_CONFIG_FILE)).unwrap();
        assert_eq!(resolved, cfg);
        assert_eq!(
            manifest.config_hash,
            sha256_hex(cfg.to_toml().as_bytes())
        );
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = toy_config(dir_a.path());
        let mut cfg_b = toy_config(dir_b.path());
        cfg_a.data.dyn_size = 150;
        cfg_b.data.dyn_size = 150;
        run_pipeline(&cfg_a, &PipelineOptions::default()).unwrap();
        run_pipeline(&cfg_b, &PipelineOptions::default()).unwrap();
        for file in [
            SFT_LOG_FILE,
            PRE_LOG_FILE,
            REWARD_TRACE_FILE,
            DYN_TRACE_FILE,
            DYN_LOG_FILE,
        ] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }
}
