//! Drives a vector env with a policy and writes transitions into a buffer.

use std::time::{Duration, Instant};

use rlforge_core::env::Action;
use rlforge_core::policy::Policy;
use rlforge_core::replay::{ReplayError, Transition, VectorReplayBuffer};
use rlforge_core::rng::derive_seed;
use rlforge_core::SplitMix64;

use crate::vector_env::{EnvMode, SlotState, StepBatch, VecEnvError, VectorEnv};

const ACT_STREAM: u64 = 0xac7;
const RESET_STREAM: u64 = 0x5e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CollectTarget {
    Steps(u64),
    Episodes(u64),
    WallTime(Duration),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectStats {
    pub n_collected_steps: u64,
    pub n_collected_episodes: u64,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<u64>,
    pub wall_time: Duration,
    pub per_env_step_counts: Vec<u64>,
}

impl CollectStats {
    fn new(n_envs: usize) -> Self {
        Self {
            per_env_step_counts: vec![0; n_envs],
            ..Default::default()
        }
    }

    pub fn mean_return(&self) -> f64 {
        mean_std(&self.episode_returns).0
    }

    pub fn std_return(&self) -> f64 {
        mean_std(&self.episode_returns).1
    }
}

/// Population mean and standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("collection target must be positive")]
    EmptyTarget,
    #[error("no episode finished within {0} steps; add a time limit or raise the step cap")]
    TargetUnreachable(u64),
    #[error("asynchronous collection needs an env in async mode, found {0}")]
    WrongMode(EnvMode),
    #[error("policy expects obs dim {policy}, env provides {env}")]
    ObsDim { policy: usize, env: usize },
    #[error(transparent)]
    Env(#[from] VecEnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Everything needed to continue collection exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectorState {
    pub seed: u64,
    pub act_rngs: Vec<(u64, u64)>,
    pub reset_counts: Vec<u64>,
    pub last_obs: Vec<Option<Vec<f64>>>,
    pub ep_returns: Vec<f64>,
    pub ep_lengths: Vec<u64>,
    pub env_snapshots: Vec<Vec<u64>>,
    pub env_states: Vec<SlotState>,
}

pub struct Collector {
    venv: VectorEnv,
    seed: u64,
    act_rngs: Vec<SplitMix64>,
    reset_counts: Vec<u64>,
    last_obs: Vec<Option<Vec<f64>>>,
    ep_returns: Vec<f64>,
    ep_lengths: Vec<u64>,
    step_cap: u64,
    min_ready: usize,
}

impl Collector {
    /// Each env gets its own action stream and reset-seed stream, both
    /// derived from `seed`, so an env's trajectory does not depend on how
    /// its steps interleave with the other envs.
    pub fn new(venv: VectorEnv, seed: u64) -> Self {
        let n = venv.n_envs();
        Self {
            act_rngs: (0..n as u64)
                .map(|i| SplitMix64::new(derive_seed(derive_seed(seed, ACT_STREAM), i)))
                .collect(),
            reset_counts: vec![0; n],
            last_obs: vec![None; n],
            ep_returns: vec![0.0; n],
            ep_lengths: vec![0; n],
            step_cap: 1_000_000,
            min_ready: 1,
            venv,
            seed,
        }
    }

    /// Give up on episode targets after this many steps in one call.
    pub fn with_step_cap(mut self, cap: u64) -> Self {
        self.step_cap = cap;
        self
    }

    /// How many finished envs `collect_any` waits for in async mode.
    pub fn with_min_ready(mut self, k: usize) -> Self {
        self.min_ready = k.max(1);
        self
    }

    pub fn venv(&self) -> &VectorEnv {
        &self.venv
    }

    pub fn n_envs(&self) -> usize {
        self.venv.n_envs()
    }

    fn reset_seed(&self, id: usize) -> u64 {
        derive_seed(derive_seed(derive_seed(self.seed, RESET_STREAM), id as u64), self.reset_counts[id])
    }

    fn reset_envs(&mut self, ids: &[usize]) -> Result<(), CollectError> {
        if ids.is_empty() {
            return Ok(());
        }
        let seeds: Vec<u64> = ids.iter().map(|&i| self.reset_seed(i)).collect();
        let b = self.venv.reset(Some(ids), &seeds)?;
        for (id, obs) in b.env_ids.into_iter().zip(b.obs) {
            self.reset_counts[id] += 1;
            self.last_obs[id] = Some(obs);
            self.ep_returns[id] = 0.0;
            self.ep_lengths[id] = 0;
        }
        Ok(())
    }

    fn ensure_started(&mut self) -> Result<(), CollectError> {
        let ids: Vec<usize> = (0..self.n_envs())
            .filter(|&i| self.last_obs[i].is_none() || self.venv.state(i) == SlotState::AwaitingReset)
            .collect();
        self.reset_envs(&ids)
    }

    fn choose(&mut self, policy: &mut dyn Policy, ids: &[usize], explore: bool) -> Vec<(usize, Action)> {
        ids.iter()
            .map(|&id| {
                let obs = self.last_obs[id].as_ref().expect("env started");
                if explore {
                    if let Some(n) = policy.normalizer_mut() {
                        n.update(obs);
                    }
                }
                (id, policy.act(obs, explore, &mut self.act_rngs[id]))
            })
            .collect()
    }

    /// Turn a step batch into transitions, update episode bookkeeping and
    /// auto-reset finished envs.
    fn absorb(
        &mut self,
        actions: &[(usize, Action)],
        b: StepBatch,
        buf: Option<&mut VectorReplayBuffer>,
        stats: &mut CollectStats,
    ) -> Result<(), CollectError> {
        let mut trans = Vec::with_capacity(b.len());
        let mut finished = Vec::new();
        for (k, &id) in b.env_ids.iter().enumerate() {
            let act = actions.iter().find(|(i, _)| *i == id).expect("action for env").1.clone();
            let obs = self.last_obs[id].take().expect("env started");
            self.ep_returns[id] += b.rewards[k];
            self.ep_lengths[id] += 1;
            stats.n_collected_steps += 1;
            stats.per_env_step_counts[id] += 1;
            if b.done[k] {
                stats.n_collected_episodes += 1;
                stats.episode_returns.push(self.ep_returns[id]);
                stats.episode_lengths.push(self.ep_lengths[id]);
                finished.push(id);
            }
            self.last_obs[id] = Some(b.obs[k].clone());
            trans.push(Transition {
                obs,
                act,
                rew: b.rewards[k],
                done: b.done[k],
                truncated: b.truncated[k],
                obs_next: b.obs[k].clone(),
                env_id: id,
                info: b.infos[k].clone(),
            });
        }
        if let Some(buf) = buf {
            buf.add(&trans)?;
        }
        self.reset_envs(&finished)
    }

    fn check(&self, policy: &dyn Policy, target: CollectTarget) -> Result<(), CollectError> {
        let env = self.venv.spec().obs_dim;
        if policy.obs_dim() != env {
            return Err(CollectError::ObsDim {
                policy: policy.obs_dim(),
                env,
            });
        }
        match target {
            CollectTarget::Steps(0) | CollectTarget::Episodes(0) => Err(CollectError::EmptyTarget),
            CollectTarget::WallTime(d) if d.is_zero() => Err(CollectError::EmptyTarget),
            _ => Ok(()),
        }
    }

    fn done(&self, target: CollectTarget, stats: &CollectStats, start: Instant) -> Result<bool, CollectError> {
        Ok(match target {
            CollectTarget::Steps(k) => stats.n_collected_steps >= k,
            CollectTarget::Episodes(k) => {
                if stats.n_collected_episodes >= k {
                    true
                } else if stats.n_collected_steps >= self.step_cap {
                    return Err(CollectError::TargetUnreachable(self.step_cap));
                } else {
                    false
                }
            }
            CollectTarget::WallTime(d) => start.elapsed() >= d,
        })
    }

    /// Step every env in lock-step until `target` is met. Step targets stop
    /// at the first batch that reaches them.
    pub fn collect(
        &mut self,
        policy: &mut dyn Policy,
        mut buf: Option<&mut VectorReplayBuffer>,
        target: CollectTarget,
        explore: bool,
    ) -> Result<CollectStats, CollectError> {
        self.check(policy, target)?;
        let start = Instant::now();
        let mut stats = CollectStats::new(self.n_envs());
        self.ensure_started()?;
        let ids: Vec<usize> = (0..self.n_envs()).collect();
        loop {
            let actions = self.choose(policy, &ids, explore);
            let b = self.venv.step_sync(&actions)?;
            self.absorb(&actions, b, buf.as_deref_mut(), &mut stats)?;
            if self.done(target, &stats, start)? {
                break;
            }
        }
        stats.wall_time = start.elapsed();
        Ok(stats)
    }

    /// Submit/wait loop: only envs returned by `wait` get new actions, so
    /// fast envs are never held back by slow ones. Steps still in flight
    /// when the target is met are waited for and kept.
    pub fn collect_async(
        &mut self,
        policy: &mut dyn Policy,
        mut buf: Option<&mut VectorReplayBuffer>,
        target: CollectTarget,
        min_ready: usize,
        explore: bool,
    ) -> Result<CollectStats, CollectError> {
        if self.venv.mode() != EnvMode::Async {
            return Err(CollectError::WrongMode(self.venv.mode()));
        }
        self.check(policy, target)?;
        let start = Instant::now();
        let mut stats = CollectStats::new(self.n_envs());
        self.ensure_started()?;
        let ids: Vec<usize> = (0..self.n_envs()).collect();
        let mut pending = self.choose(policy, &ids, explore);
        self.venv.step_async_submit(&pending)?;
        let mut finished = false;
        while self.venv.in_flight() > 0 {
            let want = if finished {
                self.venv.in_flight()
            } else {
                min_ready.clamp(1, self.venv.in_flight())
            };
            let b = self.venv.wait(want, None)?;
            let returned = b.env_ids.clone();
            let acts: Vec<(usize, Action)> = pending.iter().filter(|(i, _)| returned.contains(i)).cloned().collect();
            pending.retain(|(i, _)| !returned.contains(i));
            self.absorb(&acts, b, buf.as_deref_mut(), &mut stats)?;
            if !finished && self.done(target, &stats, start)? {
                finished = true;
            }
            if !finished {
                let next = self.choose(policy, &returned, explore);
                self.venv.step_async_submit(&next)?;
                pending.extend(next);
            }
        }
        stats.wall_time = start.elapsed();
        Ok(stats)
    }

    /// `collect_async` with the configured `min_ready` when the env runs in
    /// async mode, `collect` otherwise.
    pub fn collect_any(
        &mut self,
        policy: &mut dyn Policy,
        buf: Option<&mut VectorReplayBuffer>,
        target: CollectTarget,
        explore: bool,
    ) -> Result<CollectStats, CollectError> {
        if self.venv.mode() == EnvMode::Async {
            let k = self.min_ready;
            self.collect_async(policy, buf, target, k, explore)
        } else {
            self.collect(policy, buf, target, explore)
        }
    }

    pub fn state(&mut self) -> Result<CollectorState, CollectError> {
        let (env_snapshots, env_states) = self.venv.snapshot()?;
        Ok(CollectorState {
            seed: self.seed,
            act_rngs: self.act_rngs.iter().map(|r| (r.seed(), r.counter())).collect(),
            reset_counts: self.reset_counts.clone(),
            last_obs: self.last_obs.clone(),
            ep_returns: self.ep_returns.clone(),
            ep_lengths: self.ep_lengths.clone(),
            env_snapshots,
            env_states,
        })
    }

    pub fn set_state(&mut self, s: &CollectorState) -> Result<(), CollectError> {
        let n = self.n_envs();
        let lens = [
            s.act_rngs.len(),
            s.reset_counts.len(),
            s.last_obs.len(),
            s.ep_returns.len(),
            s.ep_lengths.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(VecEnvError::SeedCount {
                expected: n,
                found: s.act_rngs.len(),
            }
            .into());
        }
        self.venv.restore(&s.env_snapshots, &s.env_states)?;
        self.seed = s.seed;
        self.act_rngs = s.act_rngs.iter().map(|&(a, b)| SplitMix64::from_parts(a, b)).collect();
        self.reset_counts = s.reset_counts.clone();
        self.last_obs = s.last_obs.clone();
        self.ep_returns = s.ep_returns.clone();
        self.ep_lengths = s.ep_lengths.clone();
        Ok(())
    }
}

/// Run `n_episode` episodes without touching any buffer or normalizer.
///
/// Episode `j` always starts from reset seed `derive_seed(seed, j)` with
/// its own action stream, and returns are reported in episode order, so
/// the result does not depend on the number of envs or the env mode.
pub fn evaluate(
    policy: &dyn Policy,
    venv: &mut VectorEnv,
    n_episode: u64,
    seed: u64,
    explore: bool,
) -> Result<CollectStats, CollectError> {
    if n_episode == 0 {
        return Err(CollectError::EmptyTarget);
    }
    let start = Instant::now();
    let n = venv.n_envs();
    let mut stats = CollectStats::new(n);
    let mut returns = vec![0.0; n_episode as usize];
    let mut lengths = vec![0u64; n_episode as usize];
    // Per env: the episode it is running and that episode's action stream.
    let mut running: Vec<Option<(usize, SplitMix64)>> = vec![None; n];
    let mut obs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut next_ep = 0usize;
    let mut start_on = |venv: &mut VectorEnv, ids: &[usize], running: &mut Vec<Option<(usize, SplitMix64)>>, obs: &mut Vec<Vec<f64>>| {
        let mut take = Vec::new();
        let mut seeds = Vec::new();
        for &id in ids {
            if (next_ep as u64) < n_episode {
                let s = derive_seed(seed, next_ep as u64);
                running[id] = Some((next_ep, SplitMix64::new(derive_seed(s, ACT_STREAM))));
                take.push(id);
                seeds.push(s);
                next_ep += 1;
            } else {
                running[id] = None;
            }
        }
        if take.is_empty() {
            return Ok(());
        }
        let b = venv.reset(Some(&take), &seeds)?;
        for (id, o) in b.env_ids.into_iter().zip(b.obs) {
            obs[id] = o;
        }
        Ok::<(), VecEnvError>(())
    };
    let all: Vec<usize> = (0..n).collect();
    start_on(venv, &all, &mut running, &mut obs)?;
    loop {
        let active: Vec<usize> = (0..n).filter(|&i| running[i].is_some()).collect();
        if active.is_empty() {
            break;
        }
        let actions: Vec<(usize, Action)> = active
            .iter()
            .map(|&id| {
                let (_, rng) = running[id].as_mut().expect("active");
                (id, policy.act(&obs[id], explore, rng))
            })
            .collect();
        let b = venv.step_sync(&actions)?;
        let mut ended = Vec::new();
        for (k, &id) in b.env_ids.iter().enumerate() {
            let ep = running[id].as_ref().expect("active").0;
            returns[ep] += b.rewards[k];
            lengths[ep] += 1;
            stats.n_collected_steps += 1;
            stats.per_env_step_counts[id] += 1;
            if stats.n_collected_steps >= 10_000_000 {
                return Err(CollectError::TargetUnreachable(10_000_000));
            }
            obs[id] = b.obs[k].clone();
            if b.done[k] {
                ended.push(id);
            }
        }
        start_on(venv, &ended, &mut running, &mut obs)?;
    }
    stats.n_collected_episodes = n_episode;
    stats.episode_returns = returns;
    stats.episode_lengths = lengths;
    stats.wall_time = start.elapsed();
    Ok(stats)
}
