//! N environments behind one batched interface.
//!
//! `Dummy` steps envs in the caller's thread. `Pooled` and `Async` run one
//! worker thread per env; each worker has its own request channel and all
//! workers report on one shared channel, tagged with their env id. Results
//! that arrive for envs the caller is not currently waiting on are parked
//! until asked for, so nothing is delivered twice or lost.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rlforge_core::env::{Action, EnvError, EnvSpec, Info, StepResult};

use crate::envs::BoxEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    Dummy,
    Pooled,
    Async,
}

impl FromStr for EnvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dummy" => Ok(EnvMode::Dummy),
            "pooled" => Ok(EnvMode::Pooled),
            "async" => Ok(EnvMode::Async),
            _ => Err(format!("unknown env mode `{s}` (dummy, pooled, async)")),
        }
    }
}

impl fmt::Display for EnvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvMode::Dummy => "dummy",
            EnvMode::Pooled => "pooled",
            EnvMode::Async => "async",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    AwaitingReset,
    Ready,
    InFlight,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VecEnvError {
    #[error("env {0} already has a step in flight")]
    EnvInFlight(usize),
    #[error("env {0} finished its episode; reset it before stepping")]
    StepAfterDone(usize),
    #[error("env id {id} out of range for {n_envs} envs")]
    UnknownEnv { id: usize, n_envs: usize },
    #[error("env id {0} listed twice")]
    DuplicateEnv(usize),
    #[error("wait(min_ready = {min_ready}) with only {pending} steps pending")]
    NotEnoughPending { min_ready: usize, pending: usize },
    #[error("seed list has {found} entries for {expected} envs")]
    SeedCount { expected: usize, found: usize },
    #[error("env {id}: {source}")]
    Env { id: usize, source: EnvError },
    #[error("worker for env {0} stopped unexpectedly")]
    WorkerDied(usize),
    #[error("vector env needs at least one env")]
    Empty,
    #[error("envs disagree on their spec")]
    SpecMismatch,
}

/// Results for a subset of envs. Rows line up with `env_ids`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepBatch {
    pub env_ids: Vec<usize>,
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
    pub truncated: Vec<bool>,
    pub infos: Vec<Info>,
    /// Set when `wait` gave up before `min_ready` results arrived.
    pub timed_out: bool,
}

impl StepBatch {
    pub fn len(&self) -> usize {
        self.env_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.env_ids.is_empty()
    }

    fn push_obs(&mut self, id: usize, obs: Vec<f64>) {
        self.env_ids.push(id);
        self.obs.push(obs);
        self.rewards.push(0.0);
        self.done.push(false);
        self.truncated.push(false);
        self.infos.push(Info::new());
    }

    fn push_step(&mut self, id: usize, r: StepResult) {
        self.env_ids.push(id);
        self.obs.push(r.obs);
        self.rewards.push(r.reward);
        self.done.push(r.done);
        self.truncated.push(r.truncated);
        self.infos.push(r.info);
    }
}

enum Request {
    Reset(u64),
    Step(Action),
    Snapshot,
    Restore(Vec<u64>),
}

enum Reply {
    Reset(Vec<f64>),
    Step(Result<StepResult, EnvError>),
    Snapshot(Vec<u64>),
    Restore(Result<(), EnvError>),
}

enum Got {
    Parked,
    Other(usize, Reply),
    TimedOut,
}

struct Worker {
    tx: Option<Sender<Request>>,
    handle: Option<JoinHandle<()>>,
}

enum Backend {
    Local(Vec<BoxEnv>),
    Threads {
        workers: Vec<Worker>,
        rx: Receiver<(usize, Reply)>,
    },
}

pub struct VectorEnv {
    mode: EnvMode,
    spec: EnvSpec,
    states: Vec<SlotState>,
    backend: Backend,
    /// Finished steps not yet handed out, keyed by env id.
    parked: BTreeMap<usize, Result<StepResult, EnvError>>,
}

fn worker_loop(id: usize, mut env: BoxEnv, rx: Receiver<Request>, tx: Sender<(usize, Reply)>) {
    while let Ok(req) = rx.recv() {
        let reply = match req {
            Request::Reset(seed) => Reply::Reset(env.reset(seed)),
            Request::Step(a) => Reply::Step(env.step(&a)),
            Request::Snapshot => Reply::Snapshot(env.snapshot()),
            Request::Restore(s) => Reply::Restore(env.restore(&s)),
        };
        if tx.send((id, reply)).is_err() {
            break;
        }
    }
}

impl VectorEnv {
    pub fn new(envs: Vec<BoxEnv>, mode: EnvMode) -> Result<Self, VecEnvError> {
        let spec = envs.first().ok_or(VecEnvError::Empty)?.spec();
        if envs.iter().any(|e| e.spec() != spec) {
            return Err(VecEnvError::SpecMismatch);
        }
        let n = envs.len();
        let backend = match mode {
            EnvMode::Dummy => Backend::Local(envs),
            EnvMode::Pooled | EnvMode::Async => {
                let (reply_tx, rx) = mpsc::channel();
                let workers = envs
                    .into_iter()
                    .enumerate()
                    .map(|(id, env)| {
                        let (tx, req_rx) = mpsc::channel();
                        let reply_tx = reply_tx.clone();
                        let handle = thread::Builder::new()
                            .name(format!("env-{id}"))
                            .spawn(move || worker_loop(id, env, req_rx, reply_tx))
                            .expect("spawn env worker");
                        Worker {
                            tx: Some(tx),
                            handle: Some(handle),
                        }
                    })
                    .collect();
                Backend::Threads { workers, rx }
            }
        };
        Ok(Self {
            mode,
            spec,
            states: vec![SlotState::AwaitingReset; n],
            backend,
            parked: BTreeMap::new(),
        })
    }

    pub fn n_envs(&self) -> usize {
        self.states.len()
    }

    pub fn mode(&self) -> EnvMode {
        self.mode
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self, id: usize) -> SlotState {
        self.states[id]
    }

    pub fn in_flight(&self) -> usize {
        self.states.iter().filter(|s| **s == SlotState::InFlight).count()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), VecEnvError> {
        let n = self.n_envs();
        let mut seen = vec![false; n];
        for &id in ids {
            if id >= n {
                return Err(VecEnvError::UnknownEnv { id, n_envs: n });
            }
            if seen[id] {
                return Err(VecEnvError::DuplicateEnv(id));
            }
            seen[id] = true;
            if self.states[id] == SlotState::InFlight {
                return Err(VecEnvError::EnvInFlight(id));
            }
        }
        Ok(())
    }

    fn send(&self, id: usize, req: Request) -> Result<(), VecEnvError> {
        match &self.backend {
            Backend::Threads { workers, .. } => workers[id]
                .tx
                .as_ref()
                .and_then(|tx| tx.send(req).ok())
                .ok_or(VecEnvError::WorkerDied(id)),
            Backend::Local(_) => unreachable!("local backend has no workers"),
        }
    }

    /// Block for the next reply from any worker. Step results are parked.
    fn recv(&mut self, deadline: Option<Instant>) -> Result<Got, VecEnvError> {
        let Backend::Threads { rx, .. } = &self.backend else {
            unreachable!("local backend has no workers");
        };
        let msg = match deadline {
            None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            Some(d) => rx.recv_timeout(d.saturating_duration_since(Instant::now())),
        };
        match msg {
            Ok((id, Reply::Step(r))) => {
                self.parked.insert(id, r);
                Ok(Got::Parked)
            }
            Ok((id, m)) => Ok(Got::Other(id, m)),
            Err(RecvTimeoutError::Timeout) => Ok(Got::TimedOut),
            Err(RecvTimeoutError::Disconnected) => {
                let dead = self.states.iter().position(|s| *s == SlotState::InFlight).unwrap_or(0);
                Err(VecEnvError::WorkerDied(dead))
            }
        }
    }

    /// Run one request on every listed env and collect the non-step replies
    /// in the order of `ids`.
    fn roundtrip(&mut self, ids: &[usize], mut make: impl FnMut(usize) -> Request) -> Result<Vec<Reply>, VecEnvError> {
        for &id in ids {
            self.send(id, make(id))?;
        }
        let mut got: BTreeMap<usize, Reply> = BTreeMap::new();
        while got.len() < ids.len() {
            if let Got::Other(id, reply) = self.recv(None)? {
                got.insert(id, reply);
            }
        }
        Ok(ids.iter().map(|id| got.remove(id).expect("reply per id")).collect())
    }

    /// Reset the listed envs (all when `ids` is `None`) with one seed each.
    pub fn reset(&mut self, ids: Option<&[usize]>, seeds: &[u64]) -> Result<StepBatch, VecEnvError> {
        let all: Vec<usize> = (0..self.n_envs()).collect();
        let ids = ids.unwrap_or(&all);
        self.check_ids(ids)?;
        if seeds.len() != ids.len() {
            return Err(VecEnvError::SeedCount {
                expected: ids.len(),
                found: seeds.len(),
            });
        }
        let mut out = StepBatch::default();
        match &mut self.backend {
            Backend::Local(envs) => {
                for (&id, &seed) in ids.iter().zip(seeds) {
                    out.push_obs(id, envs[id].reset(seed));
                }
            }
            Backend::Threads { .. } => {
                let seed_of: BTreeMap<usize, u64> = ids.iter().copied().zip(seeds.iter().copied()).collect();
                for (&id, reply) in ids.iter().zip(self.roundtrip(ids, |id| Request::Reset(seed_of[&id]))?) {
                    let Reply::Reset(obs) = reply else { unreachable!() };
                    out.push_obs(id, obs);
                }
            }
        }
        for &id in ids {
            self.states[id] = SlotState::Ready;
            self.parked.remove(&id);
        }
        Ok(out)
    }

    fn check_steppable(&self, actions: &[(usize, Action)]) -> Result<(), VecEnvError> {
        let ids: Vec<usize> = actions.iter().map(|(i, _)| *i).collect();
        self.check_ids(&ids)?;
        for &id in &ids {
            if self.states[id] == SlotState::AwaitingReset {
                return Err(VecEnvError::StepAfterDone(id));
            }
        }
        Ok(())
    }

    fn settle(&mut self, id: usize, r: Result<StepResult, EnvError>, out: &mut StepBatch) -> Result<(), VecEnvError> {
        match r {
            Ok(r) => {
                self.states[id] = if r.done { SlotState::AwaitingReset } else { SlotState::Ready };
                out.push_step(id, r);
                Ok(())
            }
            Err(source) => {
                self.states[id] = match source {
                    EnvError::StepAfterDone | EnvError::NotReset => SlotState::AwaitingReset,
                    _ => SlotState::Ready,
                };
                Err(VecEnvError::Env { id, source })
            }
        }
    }

    /// Step the keyed envs and block until all of them are done. Rows come
    /// back in the order of `actions`.
    pub fn step_sync(&mut self, actions: &[(usize, Action)]) -> Result<StepBatch, VecEnvError> {
        self.check_steppable(actions)?;
        let mut out = StepBatch::default();
        if let Backend::Local(envs) = &mut self.backend {
            let results: Vec<_> = actions.iter().map(|(id, a)| (*id, envs[*id].step(a))).collect();
            for (id, r) in results {
                self.settle(id, r, &mut out)?;
            }
            return Ok(out);
        }
        for (id, a) in actions {
            self.send(*id, Request::Step(a.clone()))?;
            self.states[*id] = SlotState::InFlight;
        }
        while actions.iter().any(|(id, _)| !self.parked.contains_key(id)) {
            self.recv(None)?;
        }
        let mut first_err = None;
        for (id, _) in actions {
            let r = self.parked.remove(id).expect("parked result");
            if let Err(e) = self.settle(*id, r, &mut out) {
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Hand actions to the keyed envs without waiting. In `Dummy` mode the
    /// steps run here and their results wait for the next `wait`.
    pub fn step_async_submit(&mut self, actions: &[(usize, Action)]) -> Result<(), VecEnvError> {
        self.check_steppable(actions)?;
        for (id, a) in actions {
            match &mut self.backend {
                Backend::Local(envs) => {
                    let r = envs[*id].step(a);
                    self.parked.insert(*id, r);
                }
                Backend::Threads { .. } => self.send(*id, Request::Step(a.clone()))?,
            }
            self.states[*id] = SlotState::InFlight;
        }
        Ok(())
    }

    /// Return every finished step once at least `min_ready` have finished,
    /// sorted by env id. With a timeout, whatever finished in time is
    /// returned with `timed_out` set.
    pub fn wait(&mut self, min_ready: usize, timeout: Option<Duration>) -> Result<StepBatch, VecEnvError> {
        let pending = self.in_flight();
        if min_ready == 0 || min_ready > pending {
            return Err(VecEnvError::NotEnoughPending { min_ready, pending });
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut timed_out = false;
        if matches!(self.backend, Backend::Threads { .. }) {
            while self.parked.len() < min_ready {
                if let Got::TimedOut = self.recv(deadline)? {
                    timed_out = true;
                    break;
                }
            }
            // Pick up anything else that is already sitting in the channel.
            while self.parked.len() < pending {
                if let Got::TimedOut = self.recv(Some(Instant::now()))? {
                    break;
                }
            }
        }
        let mut out = StepBatch {
            timed_out,
            ..Default::default()
        };
        let mut first_err = None;
        for (id, r) in std::mem::take(&mut self.parked) {
            if let Err(e) = self.settle(id, r, &mut out) {
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Per-env internal state plus slot states. Nothing may be in flight.
    pub fn snapshot(&mut self) -> Result<(Vec<Vec<u64>>, Vec<SlotState>), VecEnvError> {
        if let Some(id) = self.states.iter().position(|s| *s == SlotState::InFlight) {
            return Err(VecEnvError::EnvInFlight(id));
        }
        let snaps = match &mut self.backend {
            Backend::Local(envs) => envs.iter().map(|e| e.snapshot()).collect(),
            Backend::Threads { .. } => {
                let ids: Vec<usize> = (0..self.n_envs()).collect();
                self.roundtrip(&ids, |_| Request::Snapshot)?
                    .into_iter()
                    .map(|r| match r {
                        Reply::Snapshot(s) => s,
                        _ => unreachable!(),
                    })
                    .collect()
            }
        };
        Ok((snaps, self.states.clone()))
    }

    pub fn restore(&mut self, snaps: &[Vec<u64>], states: &[SlotState]) -> Result<(), VecEnvError> {
        let n = self.n_envs();
        if snaps.len() != n || states.len() != n || states.contains(&SlotState::InFlight) {
            return Err(VecEnvError::SeedCount {
                expected: n,
                found: snaps.len(),
            });
        }
        if let Some(id) = self.states.iter().position(|s| *s == SlotState::InFlight) {
            return Err(VecEnvError::EnvInFlight(id));
        }
        let results: Vec<Result<(), EnvError>> = match &mut self.backend {
            Backend::Local(envs) => envs.iter_mut().zip(snaps).map(|(e, s)| e.restore(s)).collect(),
            Backend::Threads { .. } => {
                let ids: Vec<usize> = (0..n).collect();
                self.roundtrip(&ids, |id| Request::Restore(snaps[id].clone()))?
                    .into_iter()
                    .map(|r| match r {
                        Reply::Restore(r) => r,
                        _ => unreachable!(),
                    })
                    .collect()
            }
        };
        for (id, r) in results.into_iter().enumerate() {
            r.map_err(|source| VecEnvError::Env { id, source })?;
        }
        self.states = states.to_vec();
        self.parked.clear();
        Ok(())
    }
}

impl Drop for VectorEnv {
    fn drop(&mut self) {
        if let Backend::Threads { workers, .. } = &mut self.backend {
            for w in workers.iter_mut() {
                w.tx.take();
            }
            for w in workers.iter_mut() {
                if let Some(h) = w.handle.take() {
                    let _ = h.join();
                }
            }
        }
    }
}

impl fmt::Debug for VectorEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorEnv")
            .field("mode", &self.mode)
            .field("states", &self.states)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    fn venv(id: &str, n: usize, mode: EnvMode) -> VectorEnv {
        let id = EnvId::parse(id).unwrap();
        VectorEnv::new((0..n).map(|_| id.build()).collect(), mode).unwrap()
    }

    #[test]
    fn reset_subset_and_seeds() {
        let mut v = venv("chain:3", 4, EnvMode::Pooled);
        let b = v.reset(None, &[1, 2, 3, 4]).unwrap();
        assert_eq!(b.env_ids, vec![0, 1, 2, 3]);
        let b = v.reset(Some(&[2]), &[9]).unwrap();
        assert_eq!(b.env_ids, vec![2]);
        assert!(v.reset(Some(&[1, 1]), &[0, 0]).is_err());
    }

    #[test]
    fn double_submit_is_rejected() {
        for mode in [EnvMode::Dummy, EnvMode::Async] {
            let mut v = venv("chain:5", 2, mode);
            v.reset(None, &[0, 0]).unwrap();
            v.step_async_submit(&[(0, Action::Discrete(1))]).unwrap();
            assert_eq!(
                v.step_async_submit(&[(0, Action::Discrete(1))]),
                Err(VecEnvError::EnvInFlight(0))
            );
            v.step_async_submit(&[(1, Action::Discrete(1))]).unwrap();
            let b = v.wait(2, None).unwrap();
            assert_eq!(b.env_ids, vec![0, 1]);
            assert!(v.wait(1, None).is_err());
        }
    }

    #[test]
    fn step_after_done_needs_reset() {
        let mut v = venv("chain:2", 1, EnvMode::Pooled);
        v.reset(None, &[0]).unwrap();
        let b = v.step_sync(&[(0, Action::Discrete(1))]).unwrap();
        assert!(b.done[0]);
        assert_eq!(v.state(0), SlotState::AwaitingReset);
        assert_eq!(v.step_sync(&[(0, Action::Discrete(1))]), Err(VecEnvError::StepAfterDone(0)));
    }

    #[test]
    fn invalid_action_keeps_env_usable() {
        let mut v = venv("chain:4", 2, EnvMode::Pooled);
        v.reset(None, &[0, 0]).unwrap();
        let e = v.step_sync(&[(0, Action::Discrete(1)), (1, Action::Discrete(7))]);
        assert!(matches!(e, Err(VecEnvError::Env { id: 1, .. })));
        assert_eq!(v.state(0), SlotState::Ready);
        assert_eq!(v.state(1), SlotState::Ready);
        assert_eq!(v.in_flight(), 0);
        v.step_sync(&[(1, Action::Discrete(0))]).unwrap();
    }

    #[test]
    fn snapshot_restore_replays() {
        let mut v = venv("cartpole", 3, EnvMode::Pooled);
        v.reset(None, &[5, 6, 7]).unwrap();
        let acts: Vec<(usize, Action)> = (0..3).map(|i| (i, Action::Discrete(i % 2))).collect();
        v.step_sync(&acts).unwrap();
        let (snap, states) = v.snapshot().unwrap();
        let a = v.step_sync(&acts).unwrap();
        v.restore(&snap, &states).unwrap();
        assert_eq!(v.step_sync(&acts).unwrap(), a);
    }
}
