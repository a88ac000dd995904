use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Min,
}

impl Reduction {
    fn neutral(self) -> f64 {
        match self {
            Reduction::Sum => 0.0,
            Reduction::Min => f64::INFINITY,
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Reduction::Sum => a + b,
            Reduction::Min => a.min(b),
        }
    }
}

/// Array-backed binary tree over a power-of-two number of leaves.
///
/// Node `1` is the root; node `k` has children `2k` and `2k + 1`; leaves start
/// at `leaf_count`. Internal nodes are always recomputed from their children,
/// never patched by deltas, so the tree is a pure function of its leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTree {
    leaf_count: usize,
    reduction: Reduction,
    nodes: Vec<f64>,
}

impl SegmentTree {
    /// A tree with at least `capacity` leaves, all set to the neutral element.
    pub fn new(capacity: usize, reduction: Reduction) -> Self {
        let leaf_count = capacity.max(1).next_power_of_two();
        Self {
            leaf_count,
            reduction,
            nodes: vec![reduction.neutral(); 2 * leaf_count],
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaf_count + i]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.leaf_count..]
    }

    /// Reduction over every leaf.
    pub fn root(&self) -> f64 {
        self.nodes[1]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.leaf_count, "leaf {i} out of range");
        let mut k = self.leaf_count + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.reduction.apply(self.nodes[2 * k], self.nodes[2 * k + 1]);
        }
    }

    /// Reset a leaf to the neutral element.
    pub fn clear(&mut self, i: usize) {
        self.set(i, self.reduction.neutral());
    }

    /// Reduction over leaves `[start, end)`.
    pub fn query(&self, start: usize, end: usize) -> f64 {
        let mut acc = self.reduction.neutral();
        let (mut lo, mut hi) = (start + self.leaf_count, end.min(self.leaf_count) + self.leaf_count);
        while lo < hi {
            if lo & 1 == 1 {
                acc = self.reduction.apply(acc, self.nodes[lo]);
                lo += 1;
            }
            if hi & 1 == 1 {
                hi -= 1;
                acc = self.reduction.apply(acc, self.nodes[hi]);
            }
            lo /= 2;
            hi /= 2;
        }
        acc
    }

    /// Smallest `i` whose inclusive prefix sum exceeds `x` (sum trees only).
    /// Returns the last leaf if `x` is at or beyond the total.
    pub fn find_prefix(&self, mut x: f64) -> usize {
        debug_assert_eq!(self.reduction, Reduction::Sum);
        let mut k = 1;
        while k < self.leaf_count {
            let left = self.nodes[2 * k];
            if x < left {
                k *= 2;
            } else {
                x -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaf_count
    }

    /// Rebuild from a full set of leaves.
    pub fn from_leaves(leaves: &[f64], capacity: usize, reduction: Reduction) -> Self {
        let mut t = Self::new(capacity.max(leaves.len()), reduction);
        let lc = t.leaf_count;
        t.nodes[lc..lc + leaves.len()].copy_from_slice(leaves);
        for k in (1..lc).rev() {
            t.nodes[k] = reduction.apply(t.nodes[2 * k], t.nodes[2 * k + 1]);
        }
        t
    }
}
