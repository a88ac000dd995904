use alloc::vec::Vec;

use super::segment_tree::{Reduction, SegmentTree};
use super::ReplayError;
use crate::rng::SplitMix64;

/// Proportional prioritized sampling over a fixed index space.
///
/// Leaves hold `p^alpha`; a sum tree drives sampling and a min tree gives the
/// smallest stored priority for importance-weight normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedSampler {
    alpha: f64,
    beta: f64,
    max_priority: f64,
    sum: SegmentTree,
    min: SegmentTree,
}

impl PrioritizedSampler {
    pub fn new(capacity: usize, alpha: f64, beta: f64) -> Result<Self, ReplayError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(ReplayError::InvalidPriority(alpha));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(ReplayError::InvalidPriority(beta));
        }
        Ok(Self {
            alpha,
            beta,
            max_priority: 1.0,
            sum: SegmentTree::new(capacity, Reduction::Sum),
            min: SegmentTree::new(capacity, Reduction::Min),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta.clamp(0.0, 1.0);
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn total(&self) -> f64 {
        self.sum.root()
    }

    /// Stored `p^alpha` at `idx` (0 for unused slots).
    pub fn weight_at(&self, idx: usize) -> f64 {
        self.sum.get(idx)
    }

    /// Give a new row the running max priority.
    pub fn insert(&mut self, idx: usize) {
        let p = self.max_priority;
        self.write(idx, libm::pow(p, self.alpha));
    }

    pub fn remove(&mut self, idx: usize) {
        self.sum.clear(idx);
        self.min.clear(idx);
    }

    pub fn update(&mut self, idx: usize, priority: f64) -> Result<(), ReplayError> {
        if !(priority > 0.0 && priority.is_finite()) {
            return Err(ReplayError::InvalidPriority(priority));
        }
        if idx >= self.sum.leaf_count() {
            return Err(ReplayError::InvalidIndex(idx));
        }
        self.max_priority = self.max_priority.max(priority);
        self.write(idx, libm::pow(priority, self.alpha));
        Ok(())
    }

    fn write(&mut self, idx: usize, leaf: f64) {
        self.sum.set(idx, leaf);
        self.min.set(idx, leaf);
    }

    /// Probability of drawing `idx`.
    pub fn probability(&self, idx: usize) -> f64 {
        self.sum.get(idx) / self.sum.root()
    }

    /// Draw `n` indices with probability proportional to `p^alpha`.
    pub fn sample(&self, n: usize, rng: &mut SplitMix64) -> Result<Vec<usize>, ReplayError> {
        let total = self.sum.root();
        if !(total > 0.0) {
            return Err(ReplayError::EmptyBuffer);
        }
        Ok((0..n)
            .map(|_| {
                let idx = self.sum.find_prefix(rng.next_f64() * total);
                if self.sum.get(idx) > 0.0 {
                    idx
                } else {
                    // Rounding pushed the target past the last live leaf.
                    self.sum
                        .leaves()
                        .iter()
                        .rposition(|&w| w > 0.0)
                        .expect("total > 0")
                }
            })
            .collect())
    }

    /// Importance weights `(w_i / w_min)^(-beta)`, so the largest possible weight is 1.
    pub fn weights(&self, indices: &[usize]) -> Vec<f64> {
        let w_min = self.min.root();
        indices
            .iter()
            .map(|&i| libm::pow(self.sum.get(i) / w_min, -self.beta))
            .collect()
    }

    /// Stored leaves for `indices`, for serialization.
    pub(crate) fn leaves_for(&self, indices: impl Iterator<Item = usize>) -> Vec<f64> {
        indices.map(|i| self.sum.get(i)).collect()
    }

    pub(crate) fn restore(
        capacity: usize,
        alpha: f64,
        beta: f64,
        max_priority: f64,
        leaves: &[(usize, f64)],
    ) -> Result<Self, ReplayError> {
        let mut s = Self::new(capacity, alpha, beta)?;
        if !(max_priority > 0.0 && max_priority.is_finite()) {
            return Err(ReplayError::InvalidPriority(max_priority));
        }
        s.max_priority = max_priority;
        let mut sum_leaves = alloc::vec![0.0; s.sum.leaf_count()];
        let mut min_leaves = alloc::vec![f64::INFINITY; s.sum.leaf_count()];
        for &(i, w) in leaves {
            if i >= sum_leaves.len() {
                return Err(ReplayError::InvalidIndex(i));
            }
            sum_leaves[i] = w;
            min_leaves[i] = w;
        }
        s.sum = SegmentTree::from_leaves(&sum_leaves, capacity, Reduction::Sum);
        s.min = SegmentTree::from_leaves(&min_leaves, capacity, Reduction::Min);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_normalization() {
        let mut s = PrioritizedSampler::new(2, 1.0, 0.4).unwrap();
        s.insert(0);
        s.insert(1);
        s.update(0, 1.0).unwrap();
        s.update(1, 3.0).unwrap();
        assert_eq!(s.probability(0), 0.25);
        assert_eq!(s.probability(1), 0.75);
        assert_eq!(s.max_priority(), 3.0);
        let w = s.weights(&[0, 1]);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 3f64.powf(-0.4)).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let mut s = PrioritizedSampler::new(4, 0.0, 1.0).unwrap();
        for (i, p) in [0.1, 5.0, 2.0, 100.0].into_iter().enumerate() {
            s.insert(i);
            s.update(i, p).unwrap();
        }
        for i in 0..4 {
            assert_eq!(s.probability(i), 0.25);
        }
        assert_eq!(s.weights(&[0, 1, 2, 3]), alloc::vec![1.0; 4]);
    }

    #[test]
    fn new_rows_get_max_priority() {
        let mut s = PrioritizedSampler::new(4, 0.5, 0.5).unwrap();
        s.insert(0);
        s.update(0, 9.0).unwrap();
        s.insert(1);
        assert_eq!(s.weight_at(1), 3.0);
    }

    #[test]
    fn rejects_bad_priority() {
        let mut s = PrioritizedSampler::new(2, 0.6, 0.4).unwrap();
        assert!(s.update(0, 0.0).is_err());
        assert!(s.update(0, f64::NAN).is_err());
        assert!(s.update(7, 1.0).is_err());
        assert!(PrioritizedSampler::new(2, 0.6, 1.5).is_err());
        assert_eq!(
            s.sample(1, &mut SplitMix64::new(0)),
            Err(ReplayError::EmptyBuffer)
        );
    }

    #[test]
    fn never_samples_empty_slots() {
        let mut s = PrioritizedSampler::new(8, 0.7, 0.4).unwrap();
        s.insert(2);
        s.insert(5);
        let mut rng = SplitMix64::new(1);
        for i in s.sample(2000, &mut rng).unwrap() {
            assert!(i == 2 || i == 5);
        }
    }
}
