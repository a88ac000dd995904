//! Run configuration: TOML file, dotted-path overrides, builders.

use std::path::{Path, PathBuf};

use rlforge_core::env::ActionSpace;
use rlforge_core::policy::{
    Baseline, LinearQConfig, LinearQPolicy, LinearSoftmaxPolicy, Policy, SoftmaxAlgo, SoftmaxConfig,
};
use rlforge_core::replay::{decode_buffer, Layout, VectorReplayBuffer};
use rlforge_core::rng::derive_seed;
use rlforge_core::EnvSpec;
use serde::{Deserialize, Serialize};

use crate::envs::{BoxEnv, Delay, EnvId};
use crate::collector::Collector;
use crate::trainer::{Paradigm, Trainer, TrainerConfig};
use crate::vector_env::{EnvMode, VectorEnv};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("bad override `{0}`; expected --section.key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
    /// The offline dataset could not be read or decoded.
    #[error("dataset {path}: {msg}")]
    Dataset { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LinearQ,
    LinearSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Reinforce,
    Bc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorSection {
    pub num_envs: usize,
    pub mode: EnvMode,
    pub async_min_ready: usize,
    /// Per-env latency override (`"2"` or `"1,5"` milliseconds; `""` keeps
    /// the env id's own setting). Empty list: no overrides.
    pub latency: Vec<String>,
    pub eval_num_envs: usize,
}

impl Default for VectorSection {
    fn default() -> Self {
        Self {
            num_envs: 4,
            mode: EnvMode::Dummy,
            async_min_ready: 1,
            latency: Vec::new(),
            eval_num_envs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Softmax policies only.
    pub algo: Algo,
    pub learning_rate: f64,
    pub gamma: f64,
    pub adam: bool,
    pub obs_norm: bool,
    pub obs_norm_clip: f64,
    pub n_step: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub target_sync: u64,
    pub baseline: BaselineKind,
    pub normalize_returns: bool,
    pub repeat: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyKind::LinearQ,
            algo: Algo::Reinforce,
            learning_rate: 0.1,
            gamma: 0.9,
            adam: false,
            obs_norm: false,
            obs_norm_clip: 10.0,
            n_step: 1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 2000,
            target_sync: 50,
            baseline: BaselineKind::None,
            normalize_returns: false,
            repeat: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSection {
    pub capacity: usize,
    pub prioritized: bool,
    pub alpha: f64,
    pub beta: f64,
    /// TSBF file used as the dataset for offline training.
    pub dataset: String,
}

impl Default for BufferSection {
    fn default() -> Self {
        Self {
            capacity: 20_000,
            prioritized: false,
            alpha: 0.6,
            beta: 0.4,
            dataset: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: String,
    pub output_dir: String,
    pub vector: VectorSection,
    pub policy: PolicySection,
    pub trainer: TrainerConfig,
    pub buffer: BufferSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: "chain:6+timelimit:20".into(),
            output_dir: "runs/default".into(),
            vector: VectorSection::default(),
            policy: PolicySection::default(),
            trainer: TrainerConfig::default(),
            buffer: BufferSection::default(),
        }
    }
}

/// Split `--a.b=value` arguments out of `args`, returning the rest.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Parse an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Override(key.into()))?;
    let mut t = root;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::Override(key.into()))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[])
    }

    /// Parse `text`, apply dotted-path overrides and validate.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let id = self.env_id()?;
        let spec = id.build().spec();
        let v = &self.vector;
        if v.num_envs == 0 || v.eval_num_envs == 0 {
            return bad("vector.num_envs and vector.eval_num_envs must be >= 1".into());
        }
        if !v.latency.is_empty() && v.latency.len() != v.num_envs {
            return bad(format!("vector.latency has {} entries for {} envs", v.latency.len(), v.num_envs));
        }
        for d in v.latency.iter().filter(|d| !d.is_empty()) {
            Delay::parse(d).map_err(ConfigError::Invalid)?;
        }
        if !matches!(spec.action_space, ActionSpace::Discrete(_)) {
            return bad("only discrete action spaces are supported by the linear policies".into());
        }
        let p = &self.policy;
        let fit = match (p.kind, p.algo, self.trainer.paradigm) {
            (PolicyKind::LinearQ, _, Paradigm::OffPolicy | Paradigm::Offline) => true,
            (PolicyKind::LinearSoftmax, Algo::Reinforce, Paradigm::OnPolicy) => true,
            (PolicyKind::LinearSoftmax, Algo::Bc, Paradigm::Offline) => true,
            _ => false,
        };
        if !fit {
            return bad(format!(
                "policy {:?}/{:?} cannot run {:?} training",
                p.kind, p.algo, self.trainer.paradigm
            ));
        }
        if self.trainer.paradigm == Paradigm::Offline && self.buffer.dataset.is_empty() {
            return bad("offline training needs buffer.dataset".into());
        }
        if self.buffer.capacity < v.num_envs {
            return bad("buffer.capacity must be at least vector.num_envs".into());
        }
        self.trainer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_policy(&spec).map(|_| ())
    }

    pub fn env_id(&self) -> Result<EnvId, ConfigError> {
        EnvId::parse(&self.env).map_err(ConfigError::Invalid)
    }

    pub fn env_spec(&self) -> Result<EnvSpec, ConfigError> {
        Ok(self.env_id()?.build().spec())
    }

    /// Training envs, with per-env latency overrides applied.
    pub fn build_envs(&self) -> Result<Vec<BoxEnv>, ConfigError> {
        let id = self.env_id()?;
        (0..self.vector.num_envs)
            .map(|i| match self.vector.latency.get(i).filter(|d| !d.is_empty()) {
                Some(d) => Ok(id.clone().with_latency(Delay::parse(d).map_err(ConfigError::Invalid)?).build()),
                None => Ok(id.build()),
            })
            .collect()
    }

    pub fn build_venv(&self) -> Result<VectorEnv, ConfigError> {
        VectorEnv::new(self.build_envs()?, self.vector.mode).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Evaluation envs run in the caller's thread without latency overrides.
    pub fn build_eval_venv(&self) -> Result<VectorEnv, ConfigError> {
        let id = self.env_id()?;
        VectorEnv::new((0..self.vector.eval_num_envs).map(|_| id.build()).collect(), EnvMode::Dummy)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_policy(&self, spec: &EnvSpec) -> Result<Box<dyn Policy + Send>, ConfigError> {
        let n_actions = match spec.action_space {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous { .. } => return Err(ConfigError::Invalid("continuous actions".into())),
        };
        let p = &self.policy;
        let clip = p.obs_norm.then_some(p.obs_norm_clip);
        let r: Result<Box<dyn Policy + Send>, _> = match p.kind {
            PolicyKind::LinearQ => LinearQPolicy::new(
                spec.obs_dim,
                n_actions,
                LinearQConfig {
                    learning_rate: p.learning_rate,
                    gamma: p.gamma,
                    n_step: p.n_step,
                    eps_start: p.eps_start,
                    eps_end: p.eps_end,
                    eps_decay_steps: p.eps_decay_steps,
                    target_sync: p.target_sync,
                    adam: p.adam,
                    obs_norm_clip: clip,
                },
            )
            .map(|q| Box::new(q) as Box<dyn Policy + Send>),
            PolicyKind::LinearSoftmax => LinearSoftmaxPolicy::new(
                spec.obs_dim,
                n_actions,
                SoftmaxConfig {
                    algo: match p.algo {
                        Algo::Reinforce => SoftmaxAlgo::Reinforce,
                        Algo::Bc => SoftmaxAlgo::BehaviorCloning,
                    },
                    learning_rate: p.learning_rate,
                    gamma: p.gamma,
                    baseline: match p.baseline {
                        BaselineKind::None => Baseline::None,
                        BaselineKind::Mean => Baseline::MeanReturn,
                    },
                    normalize_returns: p.normalize_returns,
                    repeat: p.repeat,
                    adam: p.adam,
                    obs_norm_clip: clip,
                },
            )
            .map(|s| Box::new(s) as Box<dyn Policy + Send>),
        };
        r.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_buffer(&self, spec: &EnvSpec) -> Result<VectorReplayBuffer, ConfigError> {
        // Each env gets an equal share; any remainder is dropped.
        let n = self.vector.num_envs;
        let mut b = VectorReplayBuffer::new(self.buffer.capacity / n * n, n, Layout::discrete(spec.obs_dim))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.buffer.prioritized {
            b = b
                .with_prioritized(self.buffer.alpha, self.buffer.beta)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(b)
    }

    pub fn collector_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn trainer_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainerConfig {
        TrainerConfig {
            seed: derive_seed(self.seed, 2),
            checkpoint_dir,
            ..self.trainer.clone()
        }
    }

    /// Offline runs read `buffer.dataset`; online runs get a fresh buffer and
    /// a collector over `build_venv`.
    pub fn build_trainer(&self, checkpoint_dir: Option<PathBuf>) -> Result<Trainer, ConfigError> {
        let spec = self.env_spec()?;
        let policy = self.build_policy(&spec)?;
        let eval_env = self.build_eval_venv()?;
        let (collector, buf) = if self.trainer.paradigm == Paradigm::Offline {
            let dataset = |msg: String| ConfigError::Dataset {
                path: self.buffer.dataset.clone(),
                msg,
            };
            let bytes = std::fs::read(&self.buffer.dataset).map_err(|e| dataset(e.to_string()))?;
            (None, decode_buffer(&bytes).map_err(|e| dataset(e.to_string()))?)
        } else {
            let col = Collector::new(self.build_venv()?, self.collector_seed()).with_min_ready(self.vector.async_min_ready);
            (Some(col), self.build_buffer(&spec)?)
        };
        Trainer::new(self.trainer_config(checkpoint_dir), policy, collector, eval_env, buf)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
