//! On-policy, off-policy and offline training loops with periodic
//! evaluation, best-model tracking and exact checkpoint/resume.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rlforge_core::policy::{decode_policy, encode_policy, ParamBlock, Policy, PolicyError, PolicyMode};
use rlforge_core::replay::{decode_buffer, encode_buffer, ReplayError, ReplayView, VectorReplayBuffer};
use rlforge_core::rng::derive_seed;
use rlforge_core::wire::{Reader, WireError, Writer};
use rlforge_core::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode_collector_state, encode_collector_state, Checkpoint, CheckpointError};
use crate::collector::{evaluate, mean_std, CollectError, CollectTarget, Collector};
use crate::logger::MetricSink;
use crate::vector_env::VectorEnv;

const UPDATE_STREAM: u64 = 0x0bda;
/// Off-policy updates wait until the buffer holds this many batches.
pub const WARMUP_BATCHES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    OnPolicy,
    OffPolicy,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectUnit {
    Steps,
    Episodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub paradigm: Paradigm,
    pub max_epoch: u64,
    /// Env steps per epoch; update steps per epoch when offline.
    pub steps_per_epoch: u64,
    pub collect_per_iter: u64,
    pub collect_unit: CollectUnit,
    pub update_per_collect: u64,
    pub batch_size: usize,
    /// Evaluate after every this many iterations.
    pub eval_interval: u64,
    pub eval_episodes: u64,
    /// Sample actions during evaluation instead of acting greedily.
    pub eval_explore: bool,
    pub eval_seed: u64,
    pub stop_score: Option<f64>,
    /// Save `latest.tsck` every this many iterations; 0 saves only at the end.
    pub checkpoint_interval: u64,
    #[serde(skip)]
    pub seed: u64,
    /// Directory for checkpoints. Nothing is written when unset.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::OffPolicy,
            max_epoch: 5,
            steps_per_epoch: 2000,
            collect_per_iter: 8,
            collect_unit: CollectUnit::Steps,
            update_per_collect: 2,
            batch_size: 32,
            eval_interval: 25,
            eval_episodes: 10,
            eval_explore: false,
            eval_seed: 0,
            stop_score: None,
            checkpoint_interval: 0,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.max_epoch == 0 || self.steps_per_epoch == 0 {
            return bad("max_epoch and steps_per_epoch must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive");
        }
        if self.paradigm != Paradigm::Offline && self.collect_per_iter == 0 {
            return bad("collect_per_iter must be positive");
        }
        if self.paradigm == Paradigm::OffPolicy && (self.update_per_collect == 0 || self.batch_size == 0) {
            return bad("off-policy training needs update_per_collect and batch_size >= 1");
        }
        if matches!(self.stop_score, Some(s) if s.is_nan()) {
            return bad("stop_score is NaN");
        }
        Ok(())
    }

    fn budget(&self) -> u64 {
        self.max_epoch.saturating_mul(self.steps_per_epoch)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("policy mode {policy:?} does not fit {paradigm:?} training")]
    ConfigMismatch { policy: PolicyMode, paradigm: Paradigm },
    #[error("offline training needs a non-empty dataset")]
    EmptyBuffer,
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint state: {0}")]
    State(String),
    #[error("writing logs: {0}")]
    Log(#[from] std::io::Error),
}

impl From<WireError> for TrainError {
    fn from(e: WireError) -> Self {
        TrainError::Checkpoint(CheckpointError::Format(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub env_step: u64,
    pub update_step: u64,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub env_steps: u64,
    pub update_steps: u64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub loss_mean: Option<f64>,
}

/// Shares of total wall time, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub collecting: f64,
    pub updating: f64,
    pub evaluating: f64,
    pub others: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub paradigm: Paradigm,
    pub epochs: Vec<EpochRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_score: Option<f64>,
    pub best_checkpoint: Option<String>,
    pub env_steps: u64,
    pub update_steps: u64,
    pub iterations: u64,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
    pub time_breakdown: TimeBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Seconds {
    collecting: f64,
    updating: f64,
    evaluating: f64,
    total: f64,
}

impl Seconds {
    fn breakdown(&self) -> TimeBreakdown {
        if self.total <= 0.0 {
            return TimeBreakdown {
                collecting: 0.0,
                updating: 0.0,
                evaluating: 0.0,
                others: 100.0,
            };
        }
        let pct = |x: f64| 100.0 * x / self.total;
        let (c, u, e) = (pct(self.collecting), pct(self.updating), pct(self.evaluating));
        TimeBreakdown {
            collecting: c,
            updating: u,
            evaluating: e,
            others: (100.0 - c - u - e).max(0.0),
        }
    }
}

/// Loop counters and history; everything here goes into checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct TrainState {
    iteration: u64,
    env_steps: u64,
    update_steps: u64,
    epoch_start_env: u64,
    epoch_start_update: u64,
    epoch_loss_sum: f64,
    epoch_loss_n: u64,
    epoch_eval: Option<(f64, f64)>,
    epochs: Vec<EpochRecord>,
    evals: Vec<EvalRecord>,
    best_score: Option<f64>,
    best_checkpoint: Option<String>,
    stopped_early: bool,
    secs: Seconds,
    rng: (u64, u64),
}

pub struct Trainer {
    cfg: TrainerConfig,
    policy: Box<dyn Policy + Send>,
    collector: Option<Collector>,
    eval_env: VectorEnv,
    buf: VectorReplayBuffer,
    st: TrainState,
    rng: SplitMix64,
    sink: Option<Box<dyn MetricSink>>,
    extra: Vec<(String, Vec<u8>)>,
    best_policy: Option<Vec<u8>>,
}

/// Policy parameters plus normalizer statistics (prefixed `norm.`).
pub fn policy_blocks(policy: &dyn Policy) -> Vec<ParamBlock> {
    let mut out = policy.params();
    if let Some(n) = policy.normalizer() {
        out.extend(n.params().into_iter().map(|mut b| {
            b.name = format!("norm.{}", b.name);
            b
        }));
    }
    out
}

pub fn set_policy_blocks(policy: &mut dyn Policy, blocks: &[ParamBlock]) -> Result<(), PolicyError> {
    let (norm, own): (Vec<ParamBlock>, Vec<ParamBlock>) = blocks.iter().cloned().partition(|b| b.name.starts_with("norm."));
    policy.set_params(&own)?;
    if let Some(n) = policy.normalizer_mut() {
        let stripped: Vec<ParamBlock> = norm
            .into_iter()
            .map(|mut b| {
                b.name = b.name["norm.".len()..].to_string();
                b
            })
            .collect();
        if !stripped.is_empty() {
            n.set_params(&stripped)?;
        }
    }
    Ok(())
}

pub fn encode_policy_state(policy: &dyn Policy) -> Vec<u8> {
    encode_policy(policy.kind(), &policy_blocks(policy))
}

/// Load a TSPL blob into `policy`, checking the kind.
pub fn load_policy_state(policy: &mut dyn Policy, bytes: &[u8]) -> Result<(), TrainError> {
    let (kind, blocks) = decode_policy(bytes)?;
    if kind != policy.kind() {
        return Err(TrainError::State(format!("checkpoint holds a `{kind}` policy, expected `{}`", policy.kind())));
    }
    set_policy_blocks(policy, &blocks)?;
    Ok(())
}

fn encode_accumulators(acc: &[(f64, usize)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(acc.len() as u64);
    for &(r, l) in acc {
        w.f64(r);
        w.u64(l as u64);
    }
    w.into_inner()
}

fn decode_accumulators(bytes: &[u8]) -> Result<Vec<(f64, usize)>, WireError> {
    let mut r = Reader::new(bytes);
    let n = r.count(16)?;
    let out = (0..n).map(|_| Ok((r.f64()?, r.u64()? as usize))).collect::<Result<_, WireError>>()?;
    r.expect_end()?;
    Ok(out)
}

impl Trainer {
    /// `collector` is required for on- and off-policy training and ignored
    /// offline, where `buf` is the dataset.
    pub fn new(
        cfg: TrainerConfig,
        policy: Box<dyn Policy + Send>,
        collector: Option<Collector>,
        eval_env: VectorEnv,
        buf: VectorReplayBuffer,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let ok = matches!(
            (cfg.paradigm, policy.mode()),
            (Paradigm::OnPolicy, PolicyMode::OnPolicy)
                | (Paradigm::OffPolicy, PolicyMode::OffPolicy)
                | (Paradigm::Offline, PolicyMode::Offline | PolicyMode::OffPolicy)
        );
        if !ok {
            return Err(TrainError::ConfigMismatch {
                policy: policy.mode(),
                paradigm: cfg.paradigm,
            });
        }
        let collector = match cfg.paradigm {
            Paradigm::Offline => {
                if buf.is_empty() {
                    return Err(TrainError::EmptyBuffer);
                }
                None
            }
            _ => Some(collector.ok_or_else(|| TrainError::Config("online training needs a collector".into()))?),
        };
        if eval_env.spec().obs_dim != policy.obs_dim() {
            return Err(TrainError::Config("evaluation env does not match the policy".into()));
        }
        let rng = SplitMix64::new(derive_seed(cfg.seed, UPDATE_STREAM));
        Ok(Self {
            cfg,
            policy,
            collector,
            eval_env,
            buf,
            st: TrainState::default(),
            rng,
            sink: None,
            extra: Vec::new(),
            best_policy: None,
        })
    }

    pub fn with_sink(mut self, sink: Box<dyn MetricSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Extra section copied into every checkpoint this trainer writes.
    pub fn with_section(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.extra.push((name.to_string(), bytes));
        self
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &dyn Policy {
        &*self.policy
    }

    pub fn buffer(&self) -> &VectorReplayBuffer {
        &self.buf
    }

    pub fn env_steps(&self) -> u64 {
        self.st.env_steps
    }

    pub fn update_steps(&self) -> u64 {
        self.st.update_steps
    }

    pub fn iteration(&self) -> u64 {
        self.st.iteration
    }

    /// Parameters of the best evaluated policy so far, as a TSPL blob.
    pub fn best_policy(&self) -> Option<&[u8]> {
        self.best_policy.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.st.stopped_early
            || match self.cfg.paradigm {
                Paradigm::Offline => self.st.update_steps >= self.cfg.budget(),
                _ => self.st.env_steps >= self.cfg.budget(),
            }
    }

    fn log(&mut self, metric: &str, value: f64) -> Result<(), TrainError> {
        if let Some(s) = &mut self.sink {
            s.record(self.st.env_steps, self.st.update_steps, metric, value)?;
        }
        Ok(())
    }

    fn collect(&mut self) -> Result<(), TrainError> {
        let target = match self.cfg.collect_unit {
            CollectUnit::Steps => CollectTarget::Steps(self.cfg.collect_per_iter),
            CollectUnit::Episodes => CollectTarget::Episodes(self.cfg.collect_per_iter),
        };
        let c = self.collector.as_mut().expect("online trainer has a collector");
        self.policy.set_progress(self.st.env_steps);
        let t = Instant::now();
        let stats = c.collect_any(&mut *self.policy, Some(&mut self.buf), target, true)?;
        self.st.secs.collecting += t.elapsed().as_secs_f64();
        self.st.env_steps += stats.n_collected_steps;
        if !stats.episode_returns.is_empty() {
            self.log("train/episode_return", stats.mean_return())?;
            let mean_len = stats.episode_lengths.iter().sum::<u64>() as f64 / stats.episode_lengths.len() as f64;
            self.log("train/episode_length", mean_len)?;
        }
        Ok(())
    }

    fn update(&mut self, times: u64) -> Result<(), TrainError> {
        let t = Instant::now();
        let mut loss = 0.0;
        for _ in 0..times {
            let u = self.policy.update(&mut self.buf, self.cfg.batch_size, &mut self.rng)?;
            self.st.update_steps += u.steps as u64;
            loss += u.loss;
        }
        self.st.secs.updating += t.elapsed().as_secs_f64();
        if times > 0 {
            let loss = loss / times as f64;
            self.st.epoch_loss_sum += loss;
            self.st.epoch_loss_n += 1;
            self.log("train/loss", loss)?;
        }
        Ok(())
    }

    fn evaluate(&mut self) -> Result<(), TrainError> {
        let t = Instant::now();
        let stats = evaluate(
            &*self.policy,
            &mut self.eval_env,
            self.cfg.eval_episodes,
            self.cfg.eval_seed,
            self.cfg.eval_explore,
        )?;
        let (mean, std) = mean_std(&stats.episode_returns);
        self.st.evals.push(EvalRecord {
            iteration: self.st.iteration,
            env_step: self.st.env_steps,
            update_step: self.st.update_steps,
            mean,
            std,
            returns: stats.episode_returns,
        });
        self.st.epoch_eval = Some((mean, std));
        self.log("eval/mean", mean)?;
        self.log("eval/std", std)?;
        if self.st.best_score.is_none_or(|b| mean > b) {
            self.st.best_score = Some(mean);
            let bytes = encode_policy_state(&*self.policy);
            if let Some(dir) = self.cfg.checkpoint_dir.clone() {
                let path = dir.join("best.tsck");
                let mut c = Checkpoint::new();
                c.insert("policy", bytes.clone());
                for (n, b) in &self.extra {
                    c.insert(n, b.clone());
                }
                c.save(&path)?;
                self.st.best_checkpoint = Some(path.display().to_string());
            }
            self.best_policy = Some(bytes);
        }
        if self.cfg.stop_score.is_some_and(|s| mean >= s) {
            self.st.stopped_early = true;
        }
        self.st.secs.evaluating += t.elapsed().as_secs_f64();
        Ok(())
    }

    fn close_epoch(&mut self) -> Result<(), TrainError> {
        let st = &mut self.st;
        let rec = EpochRecord {
            epoch: st.epochs.len() as u64 + 1,
            env_steps: st.env_steps,
            update_steps: st.update_steps,
            eval_mean: st.epoch_eval.map(|e| e.0),
            eval_std: st.epoch_eval.map(|e| e.1),
            loss_mean: (st.epoch_loss_n > 0).then(|| st.epoch_loss_sum / st.epoch_loss_n as f64),
        };
        st.epoch_start_env = st.env_steps;
        st.epoch_start_update = st.update_steps;
        st.epoch_loss_sum = 0.0;
        st.epoch_loss_n = 0;
        st.epoch_eval = None;
        st.epochs.push(rec);
        let n = self.st.epochs.len() as f64;
        self.log("epoch", n)
    }

    /// One collect/update round, followed by evaluation when due.
    pub fn iterate(&mut self) -> Result<(), TrainError> {
        match self.cfg.paradigm {
            Paradigm::OnPolicy => {
                self.collect()?;
                self.update(1)?;
                self.buf.clear();
            }
            Paradigm::OffPolicy => {
                self.collect()?;
                if self.buf.len() >= WARMUP_BATCHES * self.cfg.batch_size {
                    self.update(self.cfg.update_per_collect)?;
                }
            }
            Paradigm::Offline => self.update(1)?,
        }
        self.st.iteration += 1;
        if self.st.iteration % self.cfg.eval_interval == 0 {
            self.evaluate()?;
        }
        let progressed = match self.cfg.paradigm {
            Paradigm::Offline => self.st.update_steps - self.st.epoch_start_update,
            _ => self.st.env_steps - self.st.epoch_start_env,
        };
        if progressed >= self.cfg.steps_per_epoch || (self.is_finished() && progressed > 0) {
            self.close_epoch()?;
        }
        Ok(())
    }

    fn timed(&mut self, f: impl FnOnce(&mut Self) -> Result<(), TrainError>) -> Result<(), TrainError> {
        let t = Instant::now();
        let r = f(self);
        self.st.secs.total += t.elapsed().as_secs_f64();
        if let Some(s) = &mut self.sink {
            s.flush()?;
        }
        r
    }

    /// Train until the budget is spent or the stop score is reached. Writes
    /// `final.tsck` (and `latest.tsck` periodically) when a checkpoint
    /// directory is configured.
    pub fn run(&mut self) -> Result<RunReport, TrainError> {
        self.run_until(u64::MAX)?;
        if let Some(dir) = self.cfg.checkpoint_dir.clone() {
            self.save_checkpoint(&dir.join("final.tsck"))?;
        }
        Ok(self.report())
    }

    /// Train until `iteration` iterations have run in total (or the run ends).
    pub fn run_until(&mut self, iteration: u64) -> Result<(), TrainError> {
        self.timed(|t| {
            while !t.is_finished() && t.st.iteration < iteration {
                t.iterate()?;
                let every = t.cfg.checkpoint_interval;
                if every > 0 && t.st.iteration % every == 0 {
                    if let Some(dir) = t.cfg.checkpoint_dir.clone() {
                        t.save_checkpoint(&dir.join("latest.tsck"))?;
                    }
                }
            }
            Ok(())
        })
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            paradigm: self.cfg.paradigm,
            epochs: self.st.epochs.clone(),
            evals: self.st.evals.clone(),
            best_score: self.st.best_score,
            best_checkpoint: self.st.best_checkpoint.clone(),
            env_steps: self.st.env_steps,
            update_steps: self.st.update_steps,
            iterations: self.st.iteration,
            stopped_early: self.st.stopped_early,
            wall_time_secs: self.st.secs.total,
            time_breakdown: self.st.secs.breakdown(),
        }
    }

    pub fn checkpoint(&mut self) -> Result<Checkpoint, TrainError> {
        let mut st = self.st.clone();
        st.rng = (self.rng.seed(), self.rng.counter());
        let mut c = Checkpoint::new();
        let manifest = serde_json::json!({
            "paradigm": self.cfg.paradigm,
            "policy_kind": self.policy.kind(),
            "iteration": st.iteration,
            "env_steps": st.env_steps,
        });
        c.insert("manifest", manifest.to_string().into_bytes());
        c.insert("policy", encode_policy_state(&*self.policy));
        c.insert(
            "trainer",
            serde_json::to_vec(&st).map_err(|e| TrainError::State(e.to_string()))?,
        );
        if let Some(col) = &mut self.collector {
            c.insert("collector", encode_collector_state(&col.state()?));
        }
        if self.cfg.paradigm != Paradigm::Offline {
            c.insert("buffer", encode_buffer(&self.buf));
            c.insert("buffer.episodes", encode_accumulators(&self.buf.episode_accumulators()));
        }
        if let Some(b) = &self.best_policy {
            c.insert("best_policy", b.clone());
        }
        for (n, b) in &self.extra {
            c.insert(n, b.clone());
        }
        Ok(c)
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<(), TrainError> {
        self.checkpoint()?.save(path)?;
        Ok(())
    }

    /// Restore a checkpoint written by a trainer with the same configuration.
    /// Every section is decoded before anything is changed.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<(), TrainError> {
        let (kind, blocks) = decode_policy(c.require("policy")?)?;
        if kind != self.policy.kind() {
            return Err(TrainError::State(format!("checkpoint holds a `{kind}` policy, expected `{}`", self.policy.kind())));
        }
        let st: TrainState =
            serde_json::from_slice(c.require("trainer")?).map_err(|e| TrainError::State(e.to_string()))?;
        let col = match (&self.collector, c.get("collector")) {
            (Some(_), Some(b)) => Some(decode_collector_state(b)?),
            (Some(_), None) => return Err(CheckpointError::MissingSection("collector".into()).into()),
            _ => None,
        };
        let buf = if self.cfg.paradigm != Paradigm::Offline {
            let mut b = decode_buffer(c.require("buffer")?)?;
            b.set_episode_accumulators(&decode_accumulators(c.require("buffer.episodes")?)?)?;
            Some(b)
        } else {
            None
        };
        set_policy_blocks(&mut *self.policy, &blocks)?;
        if let (Some(col), Some(s)) = (&mut self.collector, &col) {
            col.set_state(s)?;
        }
        if let Some(b) = buf {
            self.buf = b;
        }
        self.rng = SplitMix64::from_parts(st.rng.0, st.rng.1);
        self.best_policy = c.get("best_policy").map(<[u8]>::to_vec);
        self.st = st;
        Ok(())
    }

    pub fn resume(&mut self, path: &Path) -> Result<(), TrainError> {
        let c = Checkpoint::load(path)?;
        self.restore(&c)
    }

    /// Wall time spent so far, across resumed segments.
    pub fn elapsed(&self) -> Duration {
        Duration::from_secs_f64(self.st.secs.total)
    }
}
