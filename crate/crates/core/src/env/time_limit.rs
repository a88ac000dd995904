use alloc::vec::Vec;

use super::{Action, Env, EnvError, EnvSpec, StepResult};

/// Cuts episodes after `max_steps` steps.
///
/// A cut reports `done = true, truncated = true`. A natural termination on
/// or before the limit passes through with `truncated = false`. Rewards and
/// observations are never altered.
#[derive(Debug, Clone)]
pub struct TimeLimit<E> {
    inner: E,
    max_steps: usize,
    elapsed: usize,
    ended: bool,
}

impl<E: Env> TimeLimit<E> {
    pub fn new(inner: E, max_steps: usize) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::InvalidParams("max_steps must be >= 1".into()));
        }
        Ok(Self {
            inner,
            max_steps,
            elapsed: 0,
            ended: false,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }
}

impl<E: Env> Env for TimeLimit<E> {
    fn spec(&self) -> EnvSpec {
        let mut spec = self.inner.spec();
        spec.max_episode_steps = Some(match spec.max_episode_steps {
            Some(m) => m.min(self.max_steps),
            None => self.max_steps,
        });
        spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.elapsed = 0;
        self.ended = false;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.ended {
            return Err(EnvError::StepAfterDone);
        }
        let mut r = self.inner.step(action)?;
        self.elapsed += 1;
        if !r.done && self.elapsed >= self.max_steps {
            r.done = true;
            r.truncated = true;
        }
        self.ended = r.done;
        Ok(r)
    }

    fn snapshot(&self) -> Vec<u64> {
        let mut out = self.inner.snapshot();
        out.push(self.elapsed as u64);
        out.push(self.ended as u64);
        out
    }

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError> {
        let n = state.len();
        if n < 2 {
            return Err(EnvError::InvalidSnapshot("time limit state too short".into()));
        }
        self.inner.restore(&state[..n - 2])?;
        self.elapsed = state[n - 2] as usize;
        self.ended = state[n - 1] != 0;
        Ok(())
    }
}
