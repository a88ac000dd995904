//! `TSBF` buffer container.
//!
//! ```text
//! "TSBF" | u32 version | u32 n_envs | u64 sub_capacity
//! per sub-buffer:
//!   u64 size | u64 write_cursor | u32 n_columns
//!   per column: name (u32 len + UTF-8) | u8 kind | u32 ndim | u64 dims.. | LE payload
//!   segment-head bitmap: ceil(size / 8) bytes, LSB first
//!   u8 has_priority [| f64 alpha | f64 beta | f64 max_priority | size x f64 p^alpha]
//! u32 crc32 of all preceding bytes
//! ```
//! Column kinds: 0 = f64, 1 = i64, 2 = bool (one byte each).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{ActionLayout, Layout, PrioritizedSampler, ReplayBuffer, ReplayError, VectorReplayBuffer};
use crate::batch::{Array, ArrayData, ScalarKind};
use crate::wire::{Reader, WireError, Writer};

pub const BUFFER_MAGIC: &[u8; 4] = b"TSBF";
pub const BUFFER_VERSION: u32 = 1;

fn write_array(w: &mut Writer, name: &str, a: &Array) {
    w.str(name);
    w.u8(a.kind().code());
    w.u32(a.shape().len() as u32);
    for &d in a.shape() {
        w.u64(d as u64);
    }
    match a.data() {
        ArrayData::F64(v) => v.iter().for_each(|&x| w.f64(x)),
        ArrayData::I64(v) => v.iter().for_each(|&x| w.i64(x)),
        ArrayData::Bool(v) => v.iter().for_each(|&x| w.u8(x as u8)),
    }
}

fn read_array(r: &mut Reader<'_>) -> Result<(String, Array), ReplayError> {
    let name = r.str()?;
    let kind = ScalarKind::from_code(r.u8()?)
        .ok_or_else(|| WireError::Malformed(format!("unknown scalar kind in `{name}`")))?;
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(WireError::Malformed(format!("bad rank {ndim} for `{name}`")).into());
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let d = r.count(0)?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| WireError::Malformed(format!("shape overflow in `{name}`")))?;
        shape.push(d);
    }
    let width = if kind == ScalarKind::Bool { 1 } else { 8 };
    if count > r.remaining() / width {
        return Err(WireError::Truncated(0).into());
    }
    let data = match kind {
        ScalarKind::F64 => ArrayData::F64((0..count).map(|_| r.f64()).collect::<Result<_, _>>()?),
        ScalarKind::I64 => ArrayData::I64((0..count).map(|_| r.i64()).collect::<Result<_, _>>()?),
        ScalarKind::Bool => ArrayData::Bool(
            (0..count)
                .map(|_| match r.u8()? {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(WireError::Malformed("bool byte not 0/1".into())),
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok((name, Array::new(shape, data)?))
}

/// Serialize a buffer, including its prioritized sampler if present.
pub fn encode_buffer(buf: &VectorReplayBuffer) -> Vec<u8> {
    let mut w = Writer::with_header(BUFFER_MAGIC, BUFFER_VERSION);
    w.u32(buf.n_envs() as u32);
    w.u64(buf.sub_capacity() as u64);
    for (e, sub) in buf.sub_buffers().iter().enumerate() {
        let size = sub.size();
        w.u64(size as u64);
        w.u64(sub.write_cursor() as u64);
        let cols = sub.columns();
        w.u32(cols.len() as u32);
        for (name, a) in &cols {
            write_array(&mut w, name, a);
        }
        let mut bitmap = vec![0u8; size.div_ceil(8)];
        for (i, &h) in sub.head.iter().enumerate() {
            if h {
                bitmap[i / 8] |= 1 << (i % 8);
            }
        }
        w.bytes(&bitmap);
        match buf.sampler() {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.f64(s.alpha());
                w.f64(s.beta());
                w.f64(s.max_priority());
                let base = e * buf.sub_capacity();
                for v in s.leaves_for(base..base + size) {
                    w.f64(v);
                }
            }
        }
    }
    w.finish()
}

/// Parse and validate a `TSBF` container.
pub fn decode_buffer(bytes: &[u8]) -> Result<VectorReplayBuffer, ReplayError> {
    let mut r = Reader::open(bytes, BUFFER_MAGIC, BUFFER_VERSION)?;
    let n_envs = r.u32()? as usize;
    let sub_capacity = r.count(0)?;
    if n_envs == 0 || sub_capacity == 0 {
        return Err(ReplayError::InvalidCapacity("zero envs or capacity".into()));
    }
    let mut subs = Vec::with_capacity(n_envs.min(1024));
    let mut priority: Option<(f64, f64, f64)> = None;
    let mut leaves: Vec<(usize, f64)> = Vec::new();
    let mut any_priority = None;
    for e in 0..n_envs {
        let size = r.count(1)?;
        let cursor = r.count(0)?;
        let n_cols = r.u32()? as usize;
        let mut cols = Vec::with_capacity(n_cols.min(64));
        for _ in 0..n_cols {
            cols.push(read_array(&mut r)?);
        }
        let bitmap = r.bytes(size.div_ceil(8))?;
        let head: Vec<bool> = (0..size).map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0).collect();
        let layout = layout_from_columns(&cols)?;
        subs.push(ReplayBuffer::from_parts(sub_capacity, layout, cols, head, cursor)?);
        let has = r.u8()?;
        if *any_priority.get_or_insert(has) != has || has > 1 {
            return Err(WireError::Malformed("inconsistent priority blocks".into()).into());
        }
        if has == 1 {
            let params = (r.f64()?, r.f64()?, r.f64()?);
            if *priority.get_or_insert(params) != params {
                return Err(WireError::Malformed("priority parameters differ".into()).into());
            }
            for k in 0..size {
                leaves.push((e * sub_capacity + k, r.f64()?));
            }
        }
    }
    r.expect_end()?;
    if let Some(first) = subs.first() {
        if subs.iter().any(|s| s.layout() != first.layout()) {
            return Err(ReplayError::LayoutMismatch("sub-buffer layouts differ".into()));
        }
    }
    let sampler = match priority {
        Some((alpha, beta, max_p)) => Some(PrioritizedSampler::restore(
            n_envs * sub_capacity,
            alpha,
            beta,
            max_p,
            &leaves,
        )?),
        None => None,
    };
    VectorReplayBuffer::from_subs(subs, sampler)
}

fn layout_from_columns(cols: &[(String, Array)]) -> Result<Layout, ReplayError> {
    let find = |n: &str| cols.iter().find(|(name, _)| name == n).map(|(_, a)| a);
    let obs = find("obs").ok_or_else(|| ReplayError::LayoutMismatch("no obs column".into()))?;
    let obs_dim = match obs.trailing_shape() {
        [d] => *d,
        _ => return Err(ReplayError::LayoutMismatch("obs must be rank 2".into())),
    };
    let act = find("act").ok_or_else(|| ReplayError::LayoutMismatch("no act column".into()))?;
    let action = match (act.kind(), act.trailing_shape()) {
        (ScalarKind::I64, []) => ActionLayout::Discrete,
        (ScalarKind::F64, [w]) => ActionLayout::Continuous(*w),
        _ => return Err(ReplayError::LayoutMismatch("unsupported act column".into())),
    };
    let info_keys = cols
        .iter()
        .filter_map(|(n, _)| n.strip_prefix("info.").map(String::from))
        .collect();
    Ok(Layout {
        obs_dim,
        action,
        info_keys,
    })
}
