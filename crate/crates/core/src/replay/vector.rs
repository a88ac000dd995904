use alloc::format;
use alloc::vec::Vec;

use super::{
    AddOutcome, Layout, PrioritizedSampler, ReplayBuffer, ReplayError, ReplayView, StepKind,
    Transition, TransitionRef,
};
use crate::batch::Batch;
use crate::rng::SplitMix64;

/// Replay storage split into one circular queue per environment.
///
/// Row `env * sub_capacity + slot` is slot `slot` of sub-buffer `env`.
/// Transitions from env `i` only ever land in sub-buffer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorReplayBuffer {
    subs: Vec<ReplayBuffer>,
    sub_capacity: usize,
    prioritized: Option<PrioritizedSampler>,
}

impl VectorReplayBuffer {
    pub fn new(total_capacity: usize, n_envs: usize, layout: Layout) -> Result<Self, ReplayError> {
        if n_envs == 0 || total_capacity == 0 {
            return Err(ReplayError::InvalidCapacity(
                "need at least one env and one row".into(),
            ));
        }
        if total_capacity % n_envs != 0 {
            return Err(ReplayError::InvalidCapacity(format!(
                "total capacity {total_capacity} is not divisible by {n_envs} envs"
            )));
        }
        let sub_capacity = total_capacity / n_envs;
        let subs = (0..n_envs)
            .map(|_| ReplayBuffer::new(sub_capacity, layout.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            subs,
            sub_capacity,
            prioritized: None,
        })
    }

    pub(crate) fn from_subs(
        subs: Vec<ReplayBuffer>,
        prioritized: Option<PrioritizedSampler>,
    ) -> Result<Self, ReplayError> {
        let sub_capacity = subs.first().map(ReplayBuffer::capacity).unwrap_or(0);
        if sub_capacity == 0 || subs.iter().any(|s| s.capacity() != sub_capacity) {
            return Err(ReplayError::InvalidCapacity("ragged sub-buffers".into()));
        }
        Ok(Self {
            subs,
            sub_capacity,
            prioritized,
        })
    }

    /// Attach a prioritized sampler; existing rows get priority 1.
    pub fn with_prioritized(mut self, alpha: f64, beta: f64) -> Result<Self, ReplayError> {
        let mut s = PrioritizedSampler::new(self.capacity(), alpha, beta)?;
        for i in self.ordered_indices() {
            s.insert(i);
        }
        self.prioritized = Some(s);
        Ok(self)
    }

    pub fn n_envs(&self) -> usize {
        self.subs.len()
    }

    pub fn sub_capacity(&self) -> usize {
        self.sub_capacity
    }

    pub fn capacity(&self) -> usize {
        self.sub_capacity * self.subs.len()
    }

    pub fn layout(&self) -> &Layout {
        self.subs[0].layout()
    }

    pub fn sub_buffers(&self) -> &[ReplayBuffer] {
        &self.subs
    }

    pub fn sub_buffer(&self, env_id: usize) -> Option<&ReplayBuffer> {
        self.subs.get(env_id)
    }

    pub fn sampler(&self) -> Option<&PrioritizedSampler> {
        self.prioritized.as_ref()
    }

    pub fn sampler_mut(&mut self) -> Option<&mut PrioritizedSampler> {
        self.prioritized.as_mut()
    }

    /// Per-env `(return, length)` of episodes still being added.
    pub fn episode_accumulators(&self) -> Vec<(f64, usize)> {
        self.subs.iter().map(ReplayBuffer::episode_accumulator).collect()
    }

    pub fn set_episode_accumulators(&mut self, acc: &[(f64, usize)]) -> Result<(), ReplayError> {
        if acc.len() != self.subs.len() {
            return Err(ReplayError::LengthMismatch {
                expected: self.subs.len(),
                found: acc.len(),
            });
        }
        for (s, &(r, l)) in self.subs.iter_mut().zip(acc) {
            s.set_episode_accumulator(r, l);
        }
        Ok(())
    }

    fn locate(&self, idx: usize) -> Result<(usize, usize), ReplayError> {
        let env = idx / self.sub_capacity;
        if env >= self.subs.len() || !self.subs[env].contains(idx % self.sub_capacity) {
            return Err(ReplayError::InvalidIndex(idx));
        }
        Ok((env, idx % self.sub_capacity))
    }

    /// Append transitions, each into its env's sub-buffer. The batch is
    /// validated as a whole before anything is written.
    pub fn add(&mut self, batch: &[Transition]) -> Result<AddOutcome, ReplayError> {
        for t in batch {
            let sub = self.subs.get(t.env_id).ok_or(ReplayError::UnknownEnvId {
                env_id: t.env_id,
                n_envs: self.subs.len(),
            })?;
            sub.check(t)?;
        }
        let mut out = AddOutcome::default();
        for t in batch {
            let (slot, stat) = self.subs[t.env_id].add(t)?;
            let idx = t.env_id * self.sub_capacity + slot;
            if let Some(s) = &mut self.prioritized {
                s.insert(idx);
            }
            out.indices.push(idx);
            out.episodes.extend(stat);
        }
        Ok(out)
    }

    pub fn clear(&mut self) {
        if let Some(s) = &mut self.prioritized {
            for i in self
                .subs
                .iter()
                .enumerate()
                .flat_map(|(e, sb)| (0..sb.size()).map(move |k| e * sb.capacity() + k))
            {
                s.remove(i);
            }
        }
        for s in &mut self.subs {
            s.clear();
        }
    }

    /// `n > 0`: uniform draw with replacement over all valid rows.
    /// `n == 0`: every row, by env id then chronologically.
    pub fn sample_indices(&self, n: usize, rng: &mut SplitMix64) -> Result<Vec<usize>, ReplayError> {
        let total = self.len();
        if total == 0 {
            return Err(ReplayError::EmptyBuffer);
        }
        if n == 0 {
            return Ok(self.ordered_indices());
        }
        Ok((0..n)
            .map(|_| {
                let mut k = rng.below(total as u64) as usize;
                for (e, s) in self.subs.iter().enumerate() {
                    if k < s.size() {
                        return e * self.sub_capacity + k;
                    }
                    k -= s.size();
                }
                unreachable!("k < total")
            })
            .collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SplitMix64) -> Result<(Batch, Vec<usize>), ReplayError> {
        let idx = self.sample_indices(n, rng)?;
        Ok((self.get(&idx)?, idx))
    }

    /// Prioritized draw: rows, indices and normalized importance weights.
    pub fn prioritized_sample(
        &self,
        n: usize,
        rng: &mut SplitMix64,
    ) -> Result<(Batch, Vec<usize>, Vec<f64>), ReplayError> {
        let s = self.prioritized.as_ref().ok_or(ReplayError::NotPrioritized)?;
        if self.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let idx = s.sample(n, rng)?;
        let w = s.weights(&idx);
        Ok((self.get(&idx)?, idx, w))
    }

    pub fn update_priority(&mut self, indices: &[usize], priorities: &[f64]) -> Result<(), ReplayError> {
        if indices.len() != priorities.len() {
            return Err(ReplayError::LengthMismatch {
                expected: indices.len(),
                found: priorities.len(),
            });
        }
        for &i in indices {
            self.locate(i)?;
        }
        let s = self.prioritized.as_mut().ok_or(ReplayError::NotPrioritized)?;
        for (&i, &p) in indices.iter().zip(priorities) {
            s.update(i, p)?;
        }
        Ok(())
    }

    /// Stack `depth` observation frames ending at each index, repeating the
    /// first frame of an episode for steps before its start.
    pub fn stacked_obs(&self, indices: &[usize], depth: usize) -> Result<crate::batch::Array, ReplayError> {
        let mut rows = Vec::with_capacity(indices.len() * depth);
        for &i in indices {
            let mut chain = alloc::vec![i; depth];
            let mut cur = i;
            for j in (0..depth.saturating_sub(1)).rev() {
                cur = self.prev(cur)?;
                chain[j] = cur;
            }
            rows.extend(chain);
        }
        let batch = self.get(&rows)?;
        // Inside the gathered batch each chain is self-contained.
        let prev: Vec<usize> = (0..rows.len())
            .map(|k| if k % depth == 0 { k } else { k - 1 })
            .collect();
        let stacked = batch.stack_fields("obs", depth, crate::batch::PadMode::Edge, &prev)?;
        let last: Vec<usize> = (0..indices.len()).map(|k| k * depth + depth - 1).collect();
        Ok(stacked.gather(&last)?)
    }
}

impl ReplayView for VectorReplayBuffer {
    fn len(&self) -> usize {
        self.subs.iter().map(ReplayBuffer::size).sum()
    }

    fn index_bound(&self) -> usize {
        self.capacity()
    }

    fn ordered_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for (e, s) in self.subs.iter().enumerate() {
            out.extend(s.chronological().into_iter().map(|k| e * self.sub_capacity + k));
        }
        out
    }

    fn contains(&self, idx: usize) -> bool {
        self.locate(idx).is_ok()
    }

    fn prev(&self, idx: usize) -> Result<usize, ReplayError> {
        let (e, k) = self.locate(idx)?;
        Ok(e * self.sub_capacity + self.subs[e].prev(k)?)
    }

    fn next(&self, idx: usize) -> Result<usize, ReplayError> {
        let (e, k) = self.locate(idx)?;
        Ok(e * self.sub_capacity + self.subs[e].next(k)?)
    }

    fn step_kind(&self, idx: usize) -> Result<StepKind, ReplayError> {
        let (e, k) = self.locate(idx)?;
        self.subs[e].step_kind(k)
    }

    fn transition(&self, idx: usize) -> Result<TransitionRef<'_>, ReplayError> {
        let (e, k) = self.locate(idx)?;
        self.subs[e].transition(k)
    }

    fn reward(&self, idx: usize) -> Result<f64, ReplayError> {
        let (e, k) = self.locate(idx)?;
        self.subs[e].reward(k)
    }

    fn get(&self, indices: &[usize]) -> Result<Batch, ReplayError> {
        // Gather per sub-buffer, then restore the requested order.
        let mut parts = Vec::with_capacity(indices.len());
        for &i in indices {
            let (e, k) = self.locate(i)?;
            parts.push((e, k));
        }
        if let Some(&(e0, _)) = parts.first() {
            if parts.iter().all(|&(e, _)| e == e0) {
                let local: Vec<usize> = parts.iter().map(|&(_, k)| k).collect();
                return Ok(self.subs[e0].gather_batch(&local));
            }
        } else {
            return Ok(self.subs[0].gather_batch(&[]));
        }
        let mut per_env: Vec<Vec<usize>> = alloc::vec![Vec::new(); self.subs.len()];
        let mut position = Vec::with_capacity(parts.len());
        for &(e, k) in &parts {
            position.push((e, per_env[e].len()));
            per_env[e].push(k);
        }
        let mut offsets = alloc::vec![0usize; self.subs.len()];
        let mut acc = 0;
        let mut chunks = Vec::new();
        for (e, rows) in per_env.iter().enumerate() {
            offsets[e] = acc;
            acc += rows.len();
            if !rows.is_empty() {
                chunks.push(self.subs[e].gather_batch(rows));
            }
        }
        let joined = Batch::concat(&chunks)?;
        let order: Vec<usize> = position.iter().map(|&(e, j)| offsets[e] + j).collect();
        Ok(joined.select(&order)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Info};
    use alloc::vec;

    fn tr(env_id: usize, rew: f64, done: bool) -> Transition {
        Transition {
            obs: vec![rew],
            act: Action::Discrete(1),
            rew,
            done,
            truncated: false,
            obs_next: vec![rew + 1.0],
            env_id,
            info: Info::new(),
        }
    }

    #[test]
    fn interleaved_adds_land_in_own_sub_buffer() {
        let mut b = VectorReplayBuffer::new(8, 2, Layout::discrete(1)).unwrap();
        let out = b
            .add(&[tr(0, 1.0, false), tr(1, 10.0, false), tr(1, 11.0, true), tr(0, 2.0, false)])
            .unwrap();
        assert_eq!(out.indices, vec![0, 4, 5, 1]);
        assert_eq!(out.episodes.len(), 1);
        assert_eq!(out.episodes[0].episode_return, 21.0);
        assert_eq!(b.sub_buffer(0).unwrap().size(), 2);
        assert_eq!(b.sub_buffer(1).unwrap().size(), 2);
        let (batch, idx) = b.sample(0, &mut SplitMix64::new(0)).unwrap();
        assert_eq!(idx, vec![0, 1, 4, 5]);
        assert_eq!(batch.array("rew").unwrap().as_f64().unwrap(), &[1.0, 2.0, 10.0, 11.0]);
        assert_eq!(b.tail_index(), vec![1, 5]);
    }

    #[test]
    fn rejects_bad_construction_and_env() {
        assert!(matches!(
            VectorReplayBuffer::new(10, 3, Layout::discrete(1)),
            Err(ReplayError::InvalidCapacity(_))
        ));
        let mut b = VectorReplayBuffer::new(4, 2, Layout::discrete(1)).unwrap();
        assert_eq!(
            b.add(&[tr(0, 1.0, false), tr(2, 1.0, false)]).unwrap_err(),
            ReplayError::UnknownEnvId { env_id: 2, n_envs: 2 }
        );
        // Nothing was written.
        assert_eq!(b.len(), 0);
    }

    #[test]
    fn get_preserves_request_order_across_envs() {
        let mut b = VectorReplayBuffer::new(6, 3, Layout::discrete(1)).unwrap();
        b.add(&[tr(0, 0.0, false), tr(1, 1.0, false), tr(2, 2.0, false)]).unwrap();
        let batch = b.get(&[4, 0, 2, 4]).unwrap();
        assert_eq!(batch.array("rew").unwrap().as_f64().unwrap(), &[2.0, 0.0, 1.0, 2.0]);
        assert_eq!(batch.array("env_id").unwrap().as_i64().unwrap(), &[2, 0, 1, 2]);
        assert!(b.get(&[1]).is_err());
    }

    #[test]
    fn stacked_obs_repeats_first_frame() {
        let mut b = VectorReplayBuffer::new(8, 1, Layout::discrete(1)).unwrap();
        b.add(&[tr(0, 1.0, false), tr(0, 2.0, false), tr(0, 3.0, true), tr(0, 4.0, false)])
            .unwrap();
        let s = b.stacked_obs(&[2, 0, 3], 3).unwrap();
        assert_eq!(s.shape(), &[3, 3, 1]);
        assert_eq!(
            s.as_f64().unwrap(),
            &[1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 4.0, 4.0, 4.0]
        );
    }

    #[test]
    fn prioritized_updates_and_clear() {
        let mut b = VectorReplayBuffer::new(4, 2, Layout::discrete(1))
            .unwrap()
            .with_prioritized(1.0, 0.5)
            .unwrap();
        b.add(&[tr(0, 1.0, false), tr(1, 1.0, false)]).unwrap();
        b.update_priority(&[0, 2], &[1.0, 3.0]).unwrap();
        assert_eq!(b.sampler().unwrap().probability(2), 0.75);
        assert!(b.update_priority(&[1], &[1.0]).is_err());
        b.clear();
        assert_eq!(b.sampler().unwrap().total(), 0.0);
        assert_eq!(
            b.prioritized_sample(1, &mut SplitMix64::new(0)).unwrap_err(),
            ReplayError::EmptyBuffer
        );
    }
}
