use alloc::vec::Vec;

use super::{
    AddOutcome, Layout, ReplayBuffer, ReplayError, ReplayView, StepKind, Transition,
    TransitionRef,
};
use crate::batch::Batch;
use crate::rng::SplitMix64;

/// Main buffer that only receives finished episodes, fed by one staging
/// cache per environment.
///
/// Rows `[0, main_capacity)` address the main buffer; cache `e` occupies
/// `main_capacity + e * cache_capacity ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedReplayBuffer {
    main: ReplayBuffer,
    caches: Vec<ReplayBuffer>,
    cache_capacity: usize,
}

impl CachedReplayBuffer {
    pub fn new(
        main_capacity: usize,
        n_envs: usize,
        max_episode_len: usize,
        layout: Layout,
    ) -> Result<Self, ReplayError> {
        if n_envs == 0 {
            return Err(ReplayError::InvalidCapacity("need at least one cache".into()));
        }
        let caches = (0..n_envs)
            .map(|_| ReplayBuffer::new(max_episode_len, layout.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            main: ReplayBuffer::new(main_capacity, layout)?,
            caches,
            cache_capacity: max_episode_len,
        })
    }

    pub fn main(&self) -> &ReplayBuffer {
        &self.main
    }

    pub fn cache(&self, env_id: usize) -> Option<&ReplayBuffer> {
        self.caches.get(env_id)
    }

    fn main_cap(&self) -> usize {
        self.main.capacity()
    }

    fn locate(&self, idx: usize) -> Result<(Option<usize>, usize), ReplayError> {
        if idx < self.main_cap() {
            return if self.main.contains(idx) {
                Ok((None, idx))
            } else {
                Err(ReplayError::InvalidIndex(idx))
            };
        }
        let rel = idx - self.main_cap();
        let e = rel / self.cache_capacity;
        let k = rel % self.cache_capacity;
        match self.caches.get(e) {
            Some(c) if c.contains(k) => Ok((Some(e), k)),
            _ => Err(ReplayError::InvalidIndex(idx)),
        }
    }

    fn part(&self, which: Option<usize>) -> &ReplayBuffer {
        match which {
            None => &self.main,
            Some(e) => &self.caches[e],
        }
    }

    fn global(&self, which: Option<usize>, k: usize) -> usize {
        match which {
            None => k,
            Some(e) => self.main_cap() + e * self.cache_capacity + k,
        }
    }

    /// Stage transitions; an episode end moves the whole episode into main.
    /// Returned indices refer to where each row sits after this call.
    pub fn add(&mut self, batch: &[Transition]) -> Result<AddOutcome, ReplayError> {
        for t in batch {
            let c = self.caches.get(t.env_id).ok_or(ReplayError::UnknownEnvId {
                env_id: t.env_id,
                n_envs: self.caches.len(),
            })?;
            c.check(t)?;
        }
        let mut out = AddOutcome::default();
        // (output position, env, cache slot) for rows still staged
        let mut staged_rows: Vec<(usize, usize, usize)> = Vec::new();
        for t in batch {
            let e = t.env_id;
            if self.caches[e].is_full() {
                return Err(ReplayError::CacheOverflow { env_id: e });
            }
            let (slot, stat) = self.caches[e].add(t)?;
            staged_rows.push((out.indices.len(), e, slot));
            out.indices.push(self.global(Some(e), slot));
            if let Some(stat) = stat {
                let mut moved = Vec::new();
                for k in self.caches[e].chronological() {
                    let row = self.materialize(&self.caches[e], k);
                    let (main_slot, _) = self.main.add(&row)?;
                    moved.push((k, main_slot));
                }
                staged_rows.retain(|&(pos, env, k)| {
                    if env != e {
                        return true;
                    }
                    if let Some(&(_, main_slot)) = moved.iter().find(|(c, _)| *c == k) {
                        out.indices[pos] = main_slot;
                    }
                    false
                });
                self.caches[e].clear();
                self.caches[e].set_episode_accumulator(0.0, 0);
                out.episodes.push(stat);
            }
        }
        Ok(out)
    }

    fn materialize(&self, src: &ReplayBuffer, k: usize) -> Transition {
        let t = src.transition(k).expect("staged row");
        let mut info = crate::env::Info::new();
        for (key, col) in src.layout().info_keys.iter().zip(&src.info) {
            info.insert(key.clone(), col[k]);
        }
        Transition {
            obs: t.obs.to_vec(),
            act: t.act.to_action(),
            rew: t.rew,
            done: t.done,
            truncated: t.truncated,
            obs_next: t.obs_next.to_vec(),
            env_id: t.env_id,
            info,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SplitMix64) -> Result<(Batch, Vec<usize>), ReplayError> {
        let all = self.ordered_indices();
        if all.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let idx = if n == 0 {
            all
        } else {
            (0..n).map(|_| all[rng.below(all.len() as u64) as usize]).collect()
        };
        Ok((self.get(&idx)?, idx))
    }
}

impl ReplayView for CachedReplayBuffer {
    fn len(&self) -> usize {
        self.main.size() + self.caches.iter().map(ReplayBuffer::size).sum::<usize>()
    }

    fn index_bound(&self) -> usize {
        self.main_cap() + self.caches.len() * self.cache_capacity
    }

    fn ordered_indices(&self) -> Vec<usize> {
        let mut out = self.main.chronological();
        for (e, c) in self.caches.iter().enumerate() {
            out.extend(c.chronological().into_iter().map(|k| self.global(Some(e), k)));
        }
        out
    }

    fn contains(&self, idx: usize) -> bool {
        self.locate(idx).is_ok()
    }

    fn prev(&self, idx: usize) -> Result<usize, ReplayError> {
        let (w, k) = self.locate(idx)?;
        Ok(self.global(w, self.part(w).prev(k)?))
    }

    fn next(&self, idx: usize) -> Result<usize, ReplayError> {
        let (w, k) = self.locate(idx)?;
        Ok(self.global(w, self.part(w).next(k)?))
    }

    fn step_kind(&self, idx: usize) -> Result<StepKind, ReplayError> {
        let (w, k) = self.locate(idx)?;
        self.part(w).step_kind(k)
    }

    fn transition(&self, idx: usize) -> Result<TransitionRef<'_>, ReplayError> {
        let (w, k) = self.locate(idx)?;
        self.part(w).transition(k)
    }

    fn get(&self, indices: &[usize]) -> Result<Batch, ReplayError> {
        let mut rows = Vec::with_capacity(indices.len());
        for &i in indices {
            let (w, k) = self.locate(i)?;
            rows.push(self.part(w).gather_batch(&[k]));
        }
        if rows.is_empty() {
            return Ok(self.main.gather_batch(&[]));
        }
        Ok(Batch::concat(&rows)?)
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
            act: Action::Discrete(0),
            rew,
            done,
            truncated: false,
            obs_next: vec![rew],
            env_id,
            info: Info::new(),
        }
    }

    #[test]
    fn only_finished_episodes_reach_main() {
        let mut b = CachedReplayBuffer::new(16, 2, 5, Layout::discrete(1)).unwrap();
        b.add(&[tr(0, 1.0, false), tr(1, 10.0, false)]).unwrap();
        assert_eq!(b.main().size(), 0);
        assert_eq!(b.len(), 2);
        let out = b.add(&[tr(0, 2.0, true), tr(1, 11.0, false)]).unwrap();
        assert_eq!(out.episodes.len(), 1);
        assert_eq!(out.indices, vec![1, 16 + 5 + 1]);
        assert_eq!(b.main().size(), 2);
        assert_eq!(b.cache(0).unwrap().size(), 0);
        assert_eq!(b.cache(1).unwrap().size(), 2);
        // main episode, then env 1's staged episode
        let (batch, idx) = b.sample(0, &mut SplitMix64::new(0)).unwrap();
        assert_eq!(idx, vec![0, 1, 21, 22]);
        assert_eq!(batch.array("rew").unwrap().as_f64().unwrap(), &[1.0, 2.0, 10.0, 11.0]);
        assert_eq!(b.step_kind(1).unwrap(), StepKind::LastNatural);
        assert_eq!(b.step_kind(22).unwrap(), StepKind::LastEdge);
        assert_eq!(b.next(0).unwrap(), 1);
        assert_eq!(b.prev(22).unwrap(), 21);
    }

    #[test]
    fn whole_episode_in_one_call() {
        let mut b = CachedReplayBuffer::new(16, 1, 5, Layout::discrete(1)).unwrap();
        let out = b
            .add(&[tr(0, 1.0, false), tr(0, 2.0, false), tr(0, 3.0, true)])
            .unwrap();
        assert_eq!(out.indices, vec![0, 1, 2]);
        assert_eq!(out.episodes[0].episode_return, 6.0);
    }

    #[test]
    fn overflow_is_an_error() {
        let mut b = CachedReplayBuffer::new(16, 1, 2, Layout::discrete(1)).unwrap();
        b.add(&[tr(0, 1.0, false), tr(0, 1.0, false)]).unwrap();
        assert_eq!(
            b.add(&[tr(0, 1.0, false)]).unwrap_err(),
            ReplayError::CacheOverflow { env_id: 0 }
        );
    }
}
