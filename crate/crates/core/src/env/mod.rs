//! Environment contract and the built-in desk-scale environments.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

mod cartpole;
mod chain;
mod time_limit;

pub use cartpole::CartPole;
pub use chain::ChainMdp;
pub use time_limit::TimeLimit;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("step called after the episode ended; reset first")]
    StepAfterDone,
    #[error("step called before the first reset")]
    NotReset,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Check `n >= 1` for discrete spaces and `low < high` element-wise otherwise.
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            ActionSpace::Discrete(0) => Err(EnvError::InvalidParams(
                "discrete space needs at least one action".into(),
            )),
            ActionSpace::Discrete(_) => Ok(()),
            ActionSpace::Continuous { low, high } => {
                if low.len() != high.len() || low.is_empty() {
                    return Err(EnvError::InvalidParams("bounds length mismatch".into()));
                }
                if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return Err(EnvError::InvalidParams("need low < high".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

pub type Info = BTreeMap<String, f64>;

/// One environment transition.
///
/// `done` marks any episode end. `truncated` distinguishes a time-limit cut
/// (bootstrap the successor value) from a natural terminal (do not).
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub info: Info,
}

/// A single-threaded environment instance.
///
/// After a step returns `done`, `step` must not be called again before
/// `reset`. Equal seeds and equal action sequences give equal trajectories.
pub trait Env {
    fn spec(&self) -> EnvSpec;

    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;

    /// Full internal state, bit-exact, for checkpointing.
    fn snapshot(&self) -> Vec<u64>;

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError>;
}

impl<E: Env + ?Sized> Env for alloc::boxed::Box<E> {
    fn spec(&self) -> EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }

    fn snapshot(&self) -> Vec<u64> {
        (**self).snapshot()
    }

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError> {
        (**self).restore(state)
    }
}

/// Lifecycle shared by the built-ins: 0 = never reset, 1 = running, 2 = done.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Fresh,
    Running,
    Done,
}

impl Phase {
    pub(crate) fn code(self) -> u64 {
        match self {
            Phase::Fresh => 0,
            Phase::Running => 1,
            Phase::Done => 2,
        }
    }

    pub(crate) fn from_code(c: u64) -> Result<Self, EnvError> {
        match c {
            0 => Ok(Phase::Fresh),
            1 => Ok(Phase::Running),
            2 => Ok(Phase::Done),
            _ => Err(EnvError::InvalidSnapshot("bad phase code".into())),
        }
    }

    pub(crate) fn check_step(self) -> Result<(), EnvError> {
        match self {
            Phase::Fresh => Err(EnvError::NotReset),
            Phase::Running => Ok(()),
            Phase::Done => Err(EnvError::StepAfterDone),
        }
    }
}

pub(crate) fn discrete_action(action: &Action, n: usize) -> Result<usize, EnvError> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        other => Err(EnvError::InvalidAction(alloc::format!(
            "{other:?} for Discrete({n})"
        ))),
    }
}
