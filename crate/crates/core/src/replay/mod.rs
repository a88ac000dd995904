//! Fixed-capacity transition storage with episode-boundary navigation.
//!
//! Each environment's stream lives in its own circular queue so trajectories
//! stay contiguous. Return estimators never touch storage directly; they walk
//! episodes through [`ReplayView`] (`prev`/`next`/`step_kind`), which is
//! implemented by every buffer flavour.

use alloc::string::String;
use alloc::vec::Vec;

use crate::batch::{Batch, BatchError};
use crate::env::{Action, Info};
use crate::wire::WireError;

mod buffer;
mod cached;
mod codec;
mod prioritized;
mod segment_tree;
mod vector;

pub use buffer::ReplayBuffer;
pub use cached::CachedReplayBuffer;
pub use codec::{decode_buffer, encode_buffer, BUFFER_MAGIC, BUFFER_VERSION};
pub use prioritized::PrioritizedSampler;
pub use segment_tree::{Reduction, SegmentTree};
pub use vector::VectorReplayBuffer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("unknown env id {env_id} (buffer has {n_envs} sub-buffers)")]
    UnknownEnvId { env_id: usize, n_envs: usize },
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("invalid row index {0}")]
    InvalidIndex(usize),
    #[error("transition does not match buffer layout: {0}")]
    LayoutMismatch(String),
    #[error("invalid capacity: {0}")]
    InvalidCapacity(String),
    #[error("episode cache for env {env_id} is full")]
    CacheOverflow { env_id: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("buffer has no prioritized sampler")]
    NotPrioritized,
    #[error("invalid priority {0}; priorities must be finite and > 0")]
    InvalidPriority(f64),
    #[error(transparent)]
    Format(#[from] WireError),
    #[error(transparent)]
    Batch(#[from] BatchError),
}

/// How actions are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionLayout {
    Discrete,
    Continuous(usize),
}

/// Column layout shared by every row of a buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub obs_dim: usize,
    pub action: ActionLayout,
    /// Info keys stored as float columns; other keys are dropped, missing ones read 0.
    pub info_keys: Vec<String>,
}

impl Layout {
    pub fn discrete(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            action: ActionLayout::Discrete,
            info_keys: Vec::new(),
        }
    }

    pub fn with_info_keys(mut self, keys: &[&str]) -> Self {
        self.info_keys = keys.iter().map(|k| String::from(*k)).collect();
        self
    }
}

/// One timestep record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub act: Action,
    pub rew: f64,
    pub done: bool,
    pub truncated: bool,
    pub obs_next: Vec<f64>,
    pub env_id: usize,
    pub info: Info,
}

/// Borrowed view of one stored row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRef<'a> {
    pub obs: &'a [f64],
    pub act: ActionRef<'a>,
    pub rew: f64,
    pub done: bool,
    pub truncated: bool,
    pub obs_next: &'a [f64],
    pub env_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionRef<'a> {
    Discrete(usize),
    Continuous(&'a [f64]),
}

impl ActionRef<'_> {
    pub fn discrete(self) -> Option<usize> {
        match self {
            ActionRef::Discrete(a) => Some(a),
            ActionRef::Continuous(_) => None,
        }
    }

    pub fn to_action(self) -> Action {
        match self {
            ActionRef::Discrete(a) => Action::Discrete(a),
            ActionRef::Continuous(v) => Action::Continuous(v.to_vec()),
        }
    }
}

/// Statistics of an episode that ended while being added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub env_id: usize,
    pub episode_return: f64,
    pub episode_length: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AddOutcome {
    /// Row index written for each added transition, in input order.
    pub indices: Vec<usize>,
    pub episodes: Vec<EpisodeStat>,
}

/// Timestep categories that decide where return recursion stops and whether
/// the successor value is bootstrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Interior step; the successor is stored in the next row.
    Ordinary,
    /// Natural terminal. Stops recursion, no bootstrap.
    LastNatural,
    /// Time-limit truncation. Stops recursion, bootstraps.
    LastTruncated,
    /// Newest row of an episode still in progress. Stops recursion, bootstraps.
    LastEdge,
}

impl StepKind {
    pub fn is_tail(self) -> bool {
        self != StepKind::Ordinary
    }

    /// Multiplicative gate on the `gamma * V(s_{t+1})` term.
    pub fn bootstrap_mask(self) -> f64 {
        match self {
            StepKind::LastNatural => 0.0,
            _ => 1.0,
        }
    }
}

/// The storage-agnostic API that return estimators and policies use.
pub trait ReplayView {
    /// Number of valid rows.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exclusive upper bound on row indices.
    fn index_bound(&self) -> usize;

    /// All valid rows in `sample(0)` order: by sub-buffer, then chronologically.
    fn ordered_indices(&self) -> Vec<usize>;

    fn contains(&self, idx: usize) -> bool;

    /// Chronological predecessor, clamped at the segment head.
    fn prev(&self, idx: usize) -> Result<usize, ReplayError>;

    /// Chronological successor, clamped at the segment tail.
    fn next(&self, idx: usize) -> Result<usize, ReplayError>;

    fn step_kind(&self, idx: usize) -> Result<StepKind, ReplayError>;

    fn transition(&self, idx: usize) -> Result<TransitionRef<'_>, ReplayError>;

    /// Gather rows into a batch with fields `obs, act, rew, done, truncated,
    /// obs_next, env_id` and nested `info`.
    fn get(&self, indices: &[usize]) -> Result<Batch, ReplayError>;

    fn reward(&self, idx: usize) -> Result<f64, ReplayError> {
        self.transition(idx).map(|t| t.rew)
    }

    /// Rows where return recursion stops: natural ends, time-limit ends, and
    /// the newest row of every in-progress episode.
    fn tail_index(&self) -> Vec<usize> {
        self.ordered_indices()
            .into_iter()
            .filter(|&i| self.step_kind(i).map(StepKind::is_tail).unwrap_or(false))
            .collect()
    }

    /// Bootstrap gate for each index.
    fn value_mask(&self, indices: &[usize]) -> Result<Vec<f64>, ReplayError> {
        indices
            .iter()
            .map(|&i| self.step_kind(i).map(StepKind::bootstrap_mask))
            .collect()
    }
}
