//! Policy contract, linear policies with closed-form gradients, and the
//! observation/action transforms.

use alloc::string::String;
use alloc::vec::Vec;

use crate::env::Action;
use crate::replay::{ReplayError, VectorReplayBuffer};
use crate::rng::SplitMix64;
use crate::wire::{Reader, WireError, Writer};

pub mod linear;
mod normalize;
mod q;
mod softmax;

pub use normalize::{standardize, ActionScaler, ObsNormalizer};
pub use q::{LinearQConfig, LinearQPolicy};
pub use softmax::{Baseline, LinearSoftmaxPolicy, SoftmaxAlgo, SoftmaxConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("action scaling needs a continuous action space")]
    DiscreteSpace,
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Format(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    OnPolicy,
    OffPolicy,
    Offline,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub n_samples: usize,
    /// Gradient steps taken by this call.
    pub steps: usize,
}

/// A named float64 parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: &str, v: f64) -> Self {
        Self::new(name, alloc::vec![1], alloc::vec![v])
    }
}

pub(crate) fn find_block<'a>(
    blocks: &'a [ParamBlock],
    name: &str,
    shape: &[usize],
) -> Result<&'a [f64], PolicyError> {
    let b = blocks
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| PolicyError::ParamMismatch(alloc::format!("missing block `{name}`")))?;
    if b.shape != shape {
        return Err(PolicyError::ParamMismatch(alloc::format!(
            "block `{name}` has shape {:?}, expected {shape:?}",
            b.shape
        )));
    }
    Ok(&b.data)
}

/// The policy side of the collect/update loop.
pub trait Policy {
    /// Stable identifier written into parameter files.
    fn kind(&self) -> &'static str;

    fn mode(&self) -> PolicyMode;

    fn obs_dim(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Pick an action for one raw observation. `explore = false` is greedy
    /// and never touches `rng`.
    fn act(&self, obs: &[f64], explore: bool, rng: &mut SplitMix64) -> Action;

    fn forward(&self, obs: &[Vec<f64>], explore: bool, rng: &mut SplitMix64) -> Vec<Action> {
        obs.iter().map(|o| self.act(o, explore, rng)).collect()
    }

    /// One training step (or pass) over `buf`.
    fn update(
        &mut self,
        buf: &mut VectorReplayBuffer,
        batch_size: usize,
        rng: &mut SplitMix64,
    ) -> Result<UpdateStats, PolicyError>;

    /// Called by the trainer with the running env-step count, for schedules.
    fn set_progress(&mut self, _env_steps: u64) {}

    fn normalizer(&self) -> Option<&ObsNormalizer> {
        None
    }

    fn normalizer_mut(&mut self) -> Option<&mut ObsNormalizer> {
        None
    }

    /// Everything needed to restore the policy exactly, optimizer state included.
    fn params(&self) -> Vec<ParamBlock>;

    fn set_params(&mut self, blocks: &[ParamBlock]) -> Result<(), PolicyError>;
}

pub const POLICY_MAGIC: &[u8; 4] = b"TSPL";
pub const POLICY_VERSION: u32 = 1;

/// `TSPL`: magic, version, kind string, u32 block count, then per block a
/// name, u32 rank, u64 dims and f64 payload; trailing CRC32.
pub fn encode_policy(kind: &str, blocks: &[ParamBlock]) -> Vec<u8> {
    let mut w = Writer::with_header(POLICY_MAGIC, POLICY_VERSION);
    w.str(kind);
    w.u32(blocks.len() as u32);
    for b in blocks {
        w.str(&b.name);
        w.u32(b.shape.len() as u32);
        for &d in &b.shape {
            w.u64(d as u64);
        }
        for &x in &b.data {
            w.f64(x);
        }
    }
    w.finish()
}

pub fn decode_policy(bytes: &[u8]) -> Result<(String, Vec<ParamBlock>), WireError> {
    let mut r = Reader::open(bytes, POLICY_MAGIC, POLICY_VERSION)?;
    let kind = r.str()?;
    let n = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n.min(256));
    for _ in 0..n {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(WireError::Malformed(alloc::format!("rank {ndim} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut count = 1usize;
        for _ in 0..ndim {
            let d = r.count(0)?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| WireError::Malformed("shape overflow".into()))?;
            shape.push(d);
        }
        if count > r.remaining() / 8 {
            return Err(WireError::Truncated(bytes.len()));
        }
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        blocks.push(ParamBlock { name, shape, data });
    }
    r.expect_end()?;
    Ok((kind, blocks))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn argmax_lowest_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -2.0, 5.0]), 2);
    }

    #[test]
    fn tspl_round_trip_and_corruption() {
        let blocks = vec![
            ParamBlock::new("theta", vec![2, 3], vec![0.5, -1.0, 2.0, 1e-300, f64::MAX, -0.0]),
            ParamBlock::scalar("step", 7.0),
        ];
        let bytes = encode_policy("linear_softmax", &blocks);
        let (kind, back) = decode_policy(&bytes).unwrap();
        assert_eq!(kind, "linear_softmax");
        assert_eq!(back, blocks);
        assert_eq!(encode_policy(&kind, &back), bytes);
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x80;
            assert!(matches!(decode_policy(&bad), Err(WireError::ChecksumMismatch { .. })));
        }
    }
}
