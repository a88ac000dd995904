use alloc::vec;
use alloc::vec::Vec;

use super::{find_block, ParamBlock, PolicyError};
use crate::env::ActionSpace;

/// Running per-dimension mean and variance (Welford), with clipping.
///
/// Until the first observation the transform is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clip: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|m| m / n).collect()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        let n = self.count as f64;
        x.iter()
            .zip(self.mean.iter().zip(&self.m2))
            .map(|(&v, (&m, &s))| ((v - m) / libm::sqrt(s / n + 1e-8)).clamp(-self.clip, self.clip))
            .collect()
    }

    pub fn params(&self) -> Vec<ParamBlock> {
        let d = self.dim();
        vec![
            ParamBlock::scalar("count", self.count as f64),
            ParamBlock::scalar("clip", self.clip),
            ParamBlock::new("mean", vec![d], self.mean.clone()),
            ParamBlock::new("m2", vec![d], self.m2.clone()),
        ]
    }

    pub fn set_params(&mut self, blocks: &[ParamBlock]) -> Result<(), PolicyError> {
        let d = self.dim();
        self.count = find_block(blocks, "count", &[1])?[0] as u64;
        self.clip = find_block(blocks, "clip", &[1])?[0];
        self.mean = find_block(blocks, "mean", &[d])?.to_vec();
        self.m2 = find_block(blocks, "m2", &[d])?.to_vec();
        Ok(())
    }
}

/// Subtract the mean and divide by `std + 1e-8`, in place.
pub fn standardize(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = libm::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n);
    v.iter_mut().for_each(|x| *x = (*x - mean) / (std + 1e-8));
}

/// Affine map between `[-1, 1]^d` and a box action space.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScaler {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionScaler {
    pub fn new(space: &ActionSpace) -> Result<Self, PolicyError> {
        match space {
            ActionSpace::Discrete(_) => Err(PolicyError::DiscreteSpace),
            ActionSpace::Continuous { low, high } => {
                space
                    .validate()
                    .map_err(|e| PolicyError::InvalidConfig(alloc::format!("{e}")))?;
                Ok(Self {
                    low: low.clone(),
                    high: high.clone(),
                })
            }
        }
    }

    /// Inputs outside `[-1, 1]` are clipped first.
    pub fn scale(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&x, (&l, &h))| l + (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (h - l))
            .collect()
    }

    pub fn unscale(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&x, (&l, &h))| 2.0 * (x - l) / (h - l) - 1.0)
            .collect()
    }
}
