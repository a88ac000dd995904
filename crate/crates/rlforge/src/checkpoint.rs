//! Checkpoint container: named binary sections behind one CRC.
//!
//! ```text
//! "TSCK" u32 version | u32 n_sections | (str name, blob bytes)* | u32 crc
//! ```
//!
//! The section names double as the manifest. Policy parameters are stored
//! as a TSPL blob and the replay buffer as a TSBF blob.

use std::fs::{self, File};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use rlforge_core::wire::{Reader, WireError, Writer};

use crate::collector::CollectorState;
use crate::vector_env::SlotState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Format(#[from] WireError),
    #[error("checkpoint has no `{0}` section")]
    MissingSection(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add or replace a section.
    pub fn insert(&mut self, name: &str, bytes: Vec<u8>) {
        match self.sections.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = bytes,
            None => self.sections.push((name.to_string(), bytes)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[u8], CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::MissingSection(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.u32(self.sections.len() as u32);
        for (name, bytes) in &self.sections {
            w.str(name);
            w.blob(bytes);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let n = r.u32()? as usize;
        let mut sections = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let name = r.str()?;
            let blob = r.blob()?.to_vec();
            sections.push((name, blob));
        }
        r.expect_end()?;
        Ok(Self { sections })
    }

    /// Write to a sibling temp file, sync it and rename over `path`, so a
    /// crash leaves either the old file or the new one.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

fn slot_code(s: SlotState) -> u8 {
    match s {
        SlotState::AwaitingReset => 0,
        SlotState::Ready => 1,
        SlotState::InFlight => 2,
    }
}

fn slot_from(c: u8) -> Result<SlotState, WireError> {
    match c {
        0 => Ok(SlotState::AwaitingReset),
        1 => Ok(SlotState::Ready),
        _ => Err(WireError::Malformed(format!("bad env slot state {c}"))),
    }
}

fn f64s(w: &mut Writer, xs: &[f64]) {
    w.u64(xs.len() as u64);
    xs.iter().for_each(|&x| w.f64(x));
}

fn read_f64s(r: &mut Reader) -> Result<Vec<f64>, WireError> {
    let n = r.count(8)?;
    (0..n).map(|_| r.f64()).collect()
}

fn u64s(w: &mut Writer, xs: &[u64]) {
    w.u64(xs.len() as u64);
    xs.iter().for_each(|&x| w.u64(x));
}

fn read_u64s(r: &mut Reader) -> Result<Vec<u64>, WireError> {
    let n = r.count(8)?;
    (0..n).map(|_| r.u64()).collect()
}

pub fn encode_collector_state(s: &CollectorState) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(s.seed);
    w.u64(s.act_rngs.len() as u64);
    for i in 0..s.act_rngs.len() {
        w.u64(s.act_rngs[i].0);
        w.u64(s.act_rngs[i].1);
        w.u64(s.reset_counts[i]);
        match &s.last_obs[i] {
            Some(o) => {
                w.u8(1);
                f64s(&mut w, o);
            }
            None => w.u8(0),
        }
        w.f64(s.ep_returns[i]);
        w.u64(s.ep_lengths[i]);
        u64s(&mut w, &s.env_snapshots[i]);
        w.u8(slot_code(s.env_states[i]));
    }
    w.into_inner()
}

pub fn decode_collector_state(bytes: &[u8]) -> Result<CollectorState, WireError> {
    let mut r = Reader::new(bytes);
    let seed = r.u64()?;
    let n = r.count(8 * 5 + 2)?;
    let mut s = CollectorState {
        seed,
        act_rngs: Vec::with_capacity(n),
        reset_counts: Vec::with_capacity(n),
        last_obs: Vec::with_capacity(n),
        ep_returns: Vec::with_capacity(n),
        ep_lengths: Vec::with_capacity(n),
        env_snapshots: Vec::with_capacity(n),
        env_states: Vec::with_capacity(n),
    };
    for _ in 0..n {
        s.act_rngs.push((r.u64()?, r.u64()?));
        s.reset_counts.push(r.u64()?);
        s.last_obs.push(match r.u8()? {
            0 => None,
            1 => Some(read_f64s(&mut r)?),
            c => return Err(WireError::Malformed(format!("bad observation flag {c}"))),
        });
        s.ep_returns.push(r.f64()?);
        s.ep_lengths.push(r.u64()?);
        s.env_snapshots.push(read_u64s(&mut r)?);
        s.env_states.push(slot_from(r.u8()?)?);
    }
    r.expect_end()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert("policy", vec![1, 2, 3]);
        c.insert("trainer", b"{}".to_vec());
        c.insert("empty", Vec::new());
        c
    }

    #[test]
    fn round_trip_and_replace() {
        let mut c = sample();
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), c.encode());
        c.insert("policy", vec![9]);
        assert_eq!(c.get("policy"), Some(&[9u8][..]));
        assert_eq!(c.names().count(), 3);
        assert!(matches!(c.require("buffer"), Err(CheckpointError::MissingSection(_))));
    }

    #[test]
    fn every_flipped_byte_is_caught() {
        let bytes = sample().encode();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(Checkpoint::decode(&bad).is_err(), "byte {i}");
        }
    }

    #[test]
    fn collector_state_round_trip() {
        let s = CollectorState {
            seed: 7,
            act_rngs: vec![(1, 2), (3, 4)],
            reset_counts: vec![5, 6],
            last_obs: vec![Some(vec![0.5, -1.0]), None],
            ep_returns: vec![1.5, 0.0],
            ep_lengths: vec![3, 0],
            env_snapshots: vec![vec![1, 2, 3], vec![]],
            env_states: vec![SlotState::Ready, SlotState::AwaitingReset],
        };
        assert_eq!(decode_collector_state(&encode_collector_state(&s)).unwrap(), s);
    }
}
