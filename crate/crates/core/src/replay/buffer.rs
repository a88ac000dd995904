use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    ActionLayout, ActionRef, EpisodeStat, Layout, ReplayError, ReplayView, StepKind, Transition,
    TransitionRef,
};
use crate::batch::{Array, ArrayData, Batch};
use crate::env::Action;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ActColumn {
    Discrete(Vec<i64>),
    Continuous(Vec<f64>),
}

/// A single circular queue of transitions.
///
/// Valid rows always occupy physical slots `[0, len)`; once full, the write
/// cursor marks the oldest row. `head[i]` flags rows where backward
/// navigation stops: episode starts, plus the oldest surviving row when an
/// overwrite has cut an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    layout: Layout,
    pub(crate) obs: Vec<f64>,
    pub(crate) act: ActColumn,
    pub(crate) rew: Vec<f64>,
    pub(crate) done: Vec<bool>,
    pub(crate) truncated: Vec<bool>,
    pub(crate) obs_next: Vec<f64>,
    pub(crate) env_id: Vec<i64>,
    pub(crate) info: Vec<Vec<f64>>,
    pub(crate) head: Vec<bool>,
    pub(crate) cursor: usize,
    episode_return: f64,
    episode_length: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, layout: Layout) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::InvalidCapacity("capacity must be >= 1".into()));
        }
        let act = match layout.action {
            ActionLayout::Discrete => ActColumn::Discrete(Vec::new()),
            ActionLayout::Continuous(_) => ActColumn::Continuous(Vec::new()),
        };
        let info = vec![Vec::new(); layout.info_keys.len()];
        Ok(Self {
            capacity,
            layout,
            obs: Vec::new(),
            act,
            rew: Vec::new(),
            done: Vec::new(),
            truncated: Vec::new(),
            obs_next: Vec::new(),
            env_id: Vec::new(),
            info,
            head: Vec::new(),
            cursor: 0,
            episode_return: 0.0,
            episode_length: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Next slot to be written.
    pub fn write_cursor(&self) -> usize {
        self.cursor
    }

    pub fn size(&self) -> usize {
        self.rew.len()
    }

    pub fn is_full(&self) -> bool {
        self.size() == self.capacity
    }

    /// Physical slot of the oldest row.
    pub fn oldest(&self) -> Option<usize> {
        match self.size() {
            0 => None,
            n if n < self.capacity => Some(0),
            _ => Some(self.cursor),
        }
    }

    /// Physical slot of the newest row.
    pub fn newest(&self) -> Option<usize> {
        if self.size() == 0 {
            None
        } else {
            Some((self.cursor + self.capacity - 1) % self.capacity)
        }
    }

    /// Running `(return, length)` of the episode currently being added.
    pub fn episode_accumulator(&self) -> (f64, usize) {
        (self.episode_return, self.episode_length)
    }

    pub fn set_episode_accumulator(&mut self, episode_return: f64, episode_length: usize) {
        self.episode_return = episode_return;
        self.episode_length = episode_length;
    }

    pub(crate) fn check(&self, t: &Transition) -> Result<(), ReplayError> {
        let d = self.layout.obs_dim;
        if t.obs.len() != d || t.obs_next.len() != d {
            return Err(ReplayError::LayoutMismatch(format!(
                "observation length {} / {} for obs_dim {d}",
                t.obs.len(),
                t.obs_next.len()
            )));
        }
        match (&t.act, self.layout.action) {
            (Action::Discrete(_), ActionLayout::Discrete) => Ok(()),
            (Action::Continuous(v), ActionLayout::Continuous(n)) if v.len() == n => Ok(()),
            (a, l) => Err(ReplayError::LayoutMismatch(format!("action {a:?} for {l:?}"))),
        }
    }

    /// Append one transition, overwriting the oldest row when full. Returns
    /// the slot written and the episode summary if this row ends an episode.
    pub fn add(&mut self, t: &Transition) -> Result<(usize, Option<EpisodeStat>), ReplayError> {
        self.check(t)?;
        let slot = self.cursor;
        let is_head = match self.newest() {
            None => true,
            Some(n) => self.done[n],
        };
        let d = self.layout.obs_dim;
        if slot == self.size() {
            self.obs.extend_from_slice(&t.obs);
            self.obs_next.extend_from_slice(&t.obs_next);
            match (&mut self.act, &t.act) {
                (ActColumn::Discrete(c), Action::Discrete(a)) => c.push(*a as i64),
                (ActColumn::Continuous(c), Action::Continuous(a)) => c.extend_from_slice(a),
                _ => unreachable!("layout checked"),
            }
            self.rew.push(t.rew);
            self.done.push(t.done);
            self.truncated.push(t.truncated);
            self.env_id.push(t.env_id as i64);
            for (col, key) in self.info.iter_mut().zip(&self.layout.info_keys) {
                col.push(t.info.get(key).copied().unwrap_or(0.0));
            }
            self.head.push(is_head);
        } else {
            self.obs[slot * d..(slot + 1) * d].copy_from_slice(&t.obs);
            self.obs_next[slot * d..(slot + 1) * d].copy_from_slice(&t.obs_next);
            match (&mut self.act, &t.act) {
                (ActColumn::Discrete(c), Action::Discrete(a)) => c[slot] = *a as i64,
                (ActColumn::Continuous(c), Action::Continuous(a)) => {
                    let w = a.len();
                    c[slot * w..(slot + 1) * w].copy_from_slice(a)
                }
                _ => unreachable!("layout checked"),
            }
            self.rew[slot] = t.rew;
            self.done[slot] = t.done;
            self.truncated[slot] = t.truncated;
            self.env_id[slot] = t.env_id as i64;
            for (col, key) in self.info.iter_mut().zip(&self.layout.info_keys) {
                col[slot] = t.info.get(key).copied().unwrap_or(0.0);
            }
            self.head[slot] = is_head;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        if self.is_full() {
            // The row after the one just overwritten is now the oldest.
            self.head[self.cursor] = true;
        }
        self.episode_return += t.rew;
        self.episode_length += 1;
        let stat = if t.done {
            let s = EpisodeStat {
                env_id: t.env_id,
                episode_return: self.episode_return,
                episode_length: self.episode_length,
            };
            self.episode_return = 0.0;
            self.episode_length = 0;
            Some(s)
        } else {
            None
        };
        Ok((slot, stat))
    }

    /// Drop all rows. The in-progress episode accumulator is kept so episode
    /// statistics stay correct across on-policy clears.
    pub fn clear(&mut self) {
        self.obs.clear();
        self.obs_next.clear();
        match &mut self.act {
            ActColumn::Discrete(c) => c.clear(),
            ActColumn::Continuous(c) => c.clear(),
        }
        self.rew.clear();
        self.done.clear();
        self.truncated.clear();
        self.env_id.clear();
        for c in &mut self.info {
            c.clear();
        }
        self.head.clear();
        self.cursor = 0;
    }

    /// Valid slots from oldest to newest.
    pub fn chronological(&self) -> Vec<usize> {
        match self.oldest() {
            None => Vec::new(),
            Some(o) => (0..self.size()).map(|k| (o + k) % self.capacity).collect(),
        }
    }

    pub fn is_head(&self, idx: usize) -> Result<bool, ReplayError> {
        self.valid(idx)?;
        Ok(self.head[idx])
    }

    fn valid(&self, idx: usize) -> Result<(), ReplayError> {
        if idx < self.size() {
            Ok(())
        } else {
            Err(ReplayError::InvalidIndex(idx))
        }
    }

    /// Uniform draw with replacement over valid rows.
    pub fn sample_indices(&self, n: usize, rng: &mut SplitMix64) -> Result<Vec<usize>, ReplayError> {
        if self.size() == 0 {
            return Err(ReplayError::EmptyBuffer);
        }
        if n == 0 {
            return Ok(self.chronological());
        }
        Ok((0..n).map(|_| rng.below(self.size() as u64) as usize).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SplitMix64) -> Result<(Batch, Vec<usize>), ReplayError> {
        let idx = self.sample_indices(n, rng)?;
        Ok((self.get(&idx)?, idx))
    }

    /// Recompute the in-progress accumulator from stored rows (used after load).
    pub(crate) fn rebuild_accumulator(&mut self) {
        self.episode_return = 0.0;
        self.episode_length = 0;
        let Some(newest) = self.newest() else { return };
        if self.done[newest] {
            return;
        }
        let mut i = newest;
        loop {
            self.episode_return += self.rew[i];
            self.episode_length += 1;
            if self.head[i] {
                break;
            }
            i = (i + self.capacity - 1) % self.capacity;
        }
    }

    /// Storage as named columns over the valid rows, in physical order.
    pub fn columns(&self) -> Vec<(String, Array)> {
        let all: Vec<usize> = (0..self.size()).collect();
        self.gather_columns(&all)
    }

    fn gather_columns(&self, rows: &[usize]) -> Vec<(String, Array)> {
        let d = self.layout.obs_dim;
        let n = rows.len();
        let pick_f = |src: &[f64], w: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(n * w);
            for &r in rows {
                out.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
            out
        };
        let mut cols = Vec::with_capacity(7 + self.info.len());
        let obs = Array::new(vec![n, d], ArrayData::F64(pick_f(&self.obs, d))).expect("shape");
        cols.push((String::from("obs"), obs));
        let act = match (&self.act, self.layout.action) {
            (ActColumn::Discrete(c), _) => Array::from_i64(rows.iter().map(|&r| c[r]).collect()),
            (ActColumn::Continuous(c), ActionLayout::Continuous(w)) => {
                Array::new(vec![n, w], ArrayData::F64(pick_f(c, w))).expect("shape")
            }
            _ => unreachable!("action column matches layout"),
        };
        cols.push((String::from("act"), act));
        cols.push((
            String::from("rew"),
            Array::from_f64(rows.iter().map(|&r| self.rew[r]).collect()),
        ));
        cols.push((
            String::from("done"),
            Array::from_bool(rows.iter().map(|&r| self.done[r]).collect()),
        ));
        cols.push((
            String::from("truncated"),
            Array::from_bool(rows.iter().map(|&r| self.truncated[r]).collect()),
        ));
        let obs_next =
            Array::new(vec![n, d], ArrayData::F64(pick_f(&self.obs_next, d))).expect("shape");
        cols.push((String::from("obs_next"), obs_next));
        cols.push((
            String::from("env_id"),
            Array::from_i64(rows.iter().map(|&r| self.env_id[r]).collect()),
        ));
        for (key, col) in self.layout.info_keys.iter().zip(&self.info) {
            cols.push((
                format!("info.{key}"),
                Array::from_f64(rows.iter().map(|&r| col[r]).collect()),
            ));
        }
        cols
    }

    pub(crate) fn gather_batch(&self, rows: &[usize]) -> Batch {
        let mut out = Batch::new();
        let mut info = Batch::new();
        for (name, arr) in self.gather_columns(rows) {
            match name.strip_prefix("info.") {
                Some(key) => {
                    info.insert(key, arr);
                }
                None => {
                    out.insert(&name, arr);
                }
            }
        }
        if !self.layout.info_keys.is_empty() {
            out.insert("info", info);
        }
        out
    }

    /// Rebuild from decoded parts; validates every invariant the codec relies on.
    pub(crate) fn from_parts(
        capacity: usize,
        layout: Layout,
        columns: Vec<(String, Array)>,
        head: Vec<bool>,
        cursor: usize,
    ) -> Result<Self, ReplayError> {
        let mut buf = ReplayBuffer::new(capacity, layout)?;
        let size = head.len();
        let bad = |m: String| ReplayError::LayoutMismatch(m);
        if size > capacity || cursor >= capacity || (size < capacity && cursor != size) {
            return Err(bad(format!(
                "size {size} / cursor {cursor} inconsistent with capacity {capacity}"
            )));
        }
        let d = buf.layout.obs_dim;
        for (name, arr) in columns {
            if arr.rows() != size {
                return Err(bad(format!("column `{name}` has {} rows, expected {size}", arr.rows())));
            }
            let f64s = || arr.as_f64().map(<[f64]>::to_vec);
            match name.as_str() {
                "obs" if arr.trailing_shape() == [d] => buf.obs = f64s().ok_or_else(|| bad(name.clone()))?,
                "obs_next" if arr.trailing_shape() == [d] => {
                    buf.obs_next = f64s().ok_or_else(|| bad(name.clone()))?
                }
                "act" => match buf.layout.action {
                    ActionLayout::Discrete => {
                        let v = arr.as_i64().ok_or_else(|| bad(name.clone()))?;
                        if v.iter().any(|&a| a < 0) {
                            return Err(bad("negative discrete action".into()));
                        }
                        buf.act = ActColumn::Discrete(v.to_vec());
                    }
                    ActionLayout::Continuous(w) if arr.trailing_shape() == [w] => {
                        buf.act = ActColumn::Continuous(f64s().ok_or_else(|| bad(name.clone()))?)
                    }
                    _ => return Err(bad(name)),
                },
                "rew" => buf.rew = f64s().ok_or_else(|| bad(name.clone()))?,
                "done" => buf.done = arr.as_bool().ok_or_else(|| bad(name.clone()))?.to_vec(),
                "truncated" => {
                    buf.truncated = arr.as_bool().ok_or_else(|| bad(name.clone()))?.to_vec()
                }
                "env_id" => buf.env_id = arr.as_i64().ok_or_else(|| bad(name.clone()))?.to_vec(),
                other => match other.strip_prefix("info.") {
                    Some(key) => {
                        let pos = buf
                            .layout
                            .info_keys
                            .iter()
                            .position(|k| k == key)
                            .ok_or_else(|| bad(name.clone()))?;
                        buf.info[pos] = f64s().ok_or_else(|| bad(name.clone()))?;
                    }
                    None => return Err(bad(format!("unexpected column `{name}`"))),
                },
            }
        }
        let act_len = match &buf.act {
            ActColumn::Discrete(c) => c.len(),
            ActColumn::Continuous(c) => c.len() / buf.layout_action_width().max(1),
        };
        let complete = buf.obs.len() == size * d
            && buf.obs_next.len() == size * d
            && act_len == size
            && buf.rew.len() == size
            && buf.done.len() == size
            && buf.truncated.len() == size
            && buf.env_id.len() == size
            && buf.info.iter().all(|c| c.len() == size);
        if !complete {
            return Err(bad("missing columns".into()));
        }
        buf.head = head;
        buf.cursor = if size == capacity { cursor } else { size };
        if let Some(o) = buf.oldest() {
            if !buf.head[o] {
                return Err(bad("oldest row is not a segment head".into()));
            }
        }
        buf.rebuild_accumulator();
        Ok(buf)
    }

    fn layout_action_width(&self) -> usize {
        match self.layout.action {
            ActionLayout::Discrete => 1,
            ActionLayout::Continuous(w) => w,
        }
    }
}

impl ReplayView for ReplayBuffer {
    fn len(&self) -> usize {
        self.size()
    }

    fn index_bound(&self) -> usize {
        self.capacity
    }

    fn ordered_indices(&self) -> Vec<usize> {
        self.chronological()
    }

    fn contains(&self, idx: usize) -> bool {
        idx < self.size()
    }

    fn prev(&self, idx: usize) -> Result<usize, ReplayError> {
        self.valid(idx)?;
        if self.head[idx] {
            Ok(idx)
        } else {
            Ok((idx + self.capacity - 1) % self.capacity)
        }
    }

    fn next(&self, idx: usize) -> Result<usize, ReplayError> {
        self.valid(idx)?;
        if self.done[idx] || Some(idx) == self.newest() {
            Ok(idx)
        } else {
            Ok((idx + 1) % self.capacity)
        }
    }

    fn step_kind(&self, idx: usize) -> Result<StepKind, ReplayError> {
        self.valid(idx)?;
        Ok(match (self.done[idx], self.truncated[idx]) {
            (true, false) => StepKind::LastNatural,
            (true, true) => StepKind::LastTruncated,
            _ if Some(idx) == self.newest() => StepKind::LastEdge,
            _ => StepKind::Ordinary,
        })
    }

    fn transition(&self, idx: usize) -> Result<TransitionRef<'_>, ReplayError> {
        self.valid(idx)?;
        let d = self.layout.obs_dim;
        let act = match &self.act {
            ActColumn::Discrete(c) => ActionRef::Discrete(c[idx] as usize),
            ActColumn::Continuous(c) => {
                let w = self.layout_action_width();
                ActionRef::Continuous(&c[idx * w..(idx + 1) * w])
            }
        };
        Ok(TransitionRef {
            obs: &self.obs[idx * d..(idx + 1) * d],
            act,
            rew: self.rew[idx],
            done: self.done[idx],
            truncated: self.truncated[idx],
            obs_next: &self.obs_next[idx * d..(idx + 1) * d],
            env_id: self.env_id[idx] as usize,
        })
    }

    fn get(&self, indices: &[usize]) -> Result<Batch, ReplayError> {
        for &i in indices {
            self.valid(i)?;
        }
        Ok(self.gather_batch(indices))
    }

    fn reward(&self, idx: usize) -> Result<f64, ReplayError> {
        self.valid(idx)?;
        Ok(self.rew[idx])
    }
}
