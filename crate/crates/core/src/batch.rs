//! Nested columnar container for batched RL data.
//!
//! A [`Batch`] maps field names to either a dense [`Array`] or another
//! `Batch`. Every array reachable from one batch shares the same leading
//! (row) dimension. A batch with no entries is the identity for [`concat`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchError {
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("leading dimension mismatch at `{field}`: expected {expected}, found {found}")]
    LeadingDimMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("array of shape {shape:?} needs {expected} elements, got {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    F64,
    I64,
    Bool,
}

impl ScalarKind {
    /// Tag byte used by the binary formats.
    pub fn code(self) -> u8 {
        match self {
            ScalarKind::F64 => 0,
            ScalarKind::I64 => 1,
            ScalarKind::Bool => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScalarKind::F64),
            1 => Some(ScalarKind::I64),
            2 => Some(ScalarKind::Bool),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::Bool(v) => v.len(),
        }
    }

    fn kind(&self) -> ScalarKind {
        match self {
            ArrayData::F64(_) => ScalarKind::F64,
            ArrayData::I64(_) => ScalarKind::I64,
            ArrayData::Bool(_) => ScalarKind::Bool,
        }
    }

    fn empty_like(&self, cap: usize) -> ArrayData {
        match self {
            ArrayData::F64(_) => ArrayData::F64(Vec::with_capacity(cap)),
            ArrayData::I64(_) => ArrayData::I64(Vec::with_capacity(cap)),
            ArrayData::Bool(_) => ArrayData::Bool(Vec::with_capacity(cap)),
        }
    }

    /// Append `src[start..end]`; kinds must already agree.
    fn extend_from(&mut self, src: &ArrayData, start: usize, end: usize) {
        match (self, src) {
            (ArrayData::F64(d), ArrayData::F64(s)) => d.extend_from_slice(&s[start..end]),
            (ArrayData::I64(d), ArrayData::I64(s)) => d.extend_from_slice(&s[start..end]),
            (ArrayData::Bool(d), ArrayData::Bool(s)) => d.extend_from_slice(&s[start..end]),
            _ => unreachable!("kind checked by caller"),
        }
    }

    fn extend_zeros(&mut self, n: usize) {
        match self {
            ArrayData::F64(d) => d.resize(d.len() + n, 0.0),
            ArrayData::I64(d) => d.resize(d.len() + n, 0),
            ArrayData::Bool(d) => d.resize(d.len() + n, false),
        }
    }
}

/// Dense array of one scalar kind with shape `[rows, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: ArrayData,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self, BatchError> {
        if shape.is_empty() {
            return Err(BatchError::InvalidArgument(
                "arrays need a leading dimension".into(),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(BatchError::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional float column.
    pub fn from_f64(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: ArrayData::F64(values),
        }
    }

    pub fn from_i64(values: Vec<i64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: ArrayData::I64(values),
        }
    }

    pub fn from_bool(values: Vec<bool>) -> Self {
        Self {
            shape: vec![values.len()],
            data: ArrayData::Bool(values),
        }
    }

    /// Float matrix with `rows` rows of `cols` values each.
    pub fn from_f64_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, BatchError> {
        Self::new(vec![rows, cols], ArrayData::F64(values))
    }

    /// An array with zero rows and the given trailing shape.
    pub fn empty(kind: ScalarKind, trailing: &[usize]) -> Self {
        let mut shape = vec![0];
        shape.extend_from_slice(trailing);
        let data = match kind {
            ScalarKind::F64 => ArrayData::F64(Vec::new()),
            ScalarKind::I64 => ArrayData::I64(Vec::new()),
            ScalarKind::Bool => ArrayData::Bool(Vec::new()),
        };
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn trailing_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// Number of scalars per row.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn kind(&self) -> ScalarKind {
        self.data.kind()
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            ArrayData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            ArrayData::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<&[bool]> {
        match &self.data {
            ArrayData::Bool(v) => Some(v),
            _ => None,
        }
    }

    /// Row `i` of a float array.
    pub fn f64_row(&self, i: usize) -> Option<&[f64]> {
        let w = self.row_len();
        self.as_f64().map(|v| &v[i * w..(i + 1) * w])
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Array, BatchError> {
        let rows = self.rows();
        let w = self.row_len();
        let mut data = self.data.empty_like(indices.len() * w);
        for &i in indices {
            if i >= rows {
                return Err(BatchError::IndexOutOfRange {
                    index: i,
                    len: rows,
                });
            }
            data.extend_from(&self.data, i * w, (i + 1) * w);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Array { shape, data })
    }

    fn same_layout(&self, other: &Array) -> bool {
        self.kind() == other.kind() && self.trailing_shape() == other.trailing_shape()
    }

    pub fn concat(parts: &[&Array]) -> Result<Array, BatchError> {
        let first = parts
            .first()
            .ok_or_else(|| BatchError::InvalidArgument("concat of no arrays".into()))?;
        let total: usize = parts.iter().map(|a| a.data.len()).sum();
        let mut data = first.data.empty_like(total);
        let mut rows = 0;
        for part in parts {
            if !first.same_layout(part) {
                return Err(BatchError::StructureMismatch(format!(
                    "{:?}{:?} vs {:?}{:?}",
                    first.kind(),
                    first.trailing_shape(),
                    part.kind(),
                    part.trailing_shape()
                )));
            }
            data.extend_from(&part.data, 0, part.data.len());
            rows += part.rows();
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Array { shape, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Array(Array),
    Batch(Batch),
}

impl From<Array> for Entry {
    fn from(a: Array) -> Self {
        Entry::Array(a)
    }
}

impl From<Batch> for Entry {
    fn from(b: Batch) -> Self {
        Entry::Batch(b)
    }
}

/// How `stack_fields` fills frames that precede an episode start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    /// Repeat the episode's first frame.
    #[default]
    Edge,
    /// Fill with zeros.
    Zero,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    entries: BTreeMap<String, Entry>,
}

impl Batch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, entry: impl Into<Entry>) -> Self {
        self.insert(name, entry);
        self
    }

    pub fn insert(&mut self, name: &str, entry: impl Into<Entry>) -> Option<Entry> {
        self.entries.insert(name.to_string(), entry.into())
    }

    pub fn remove(&mut self, name: &str) -> Option<Entry> {
        self.entries.remove(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Look up an entry by dotted path (`"info.x"`).
    pub fn get(&self, path: &str) -> Option<&Entry> {
        let mut parts = path.split('.');
        let mut cur = self.entries.get(parts.next()?)?;
        for p in parts {
            match cur {
                Entry::Batch(b) => cur = b.entries.get(p)?,
                Entry::Array(_) => return None,
            }
        }
        Some(cur)
    }

    pub fn array(&self, path: &str) -> Option<&Array> {
        match self.get(path)? {
            Entry::Array(a) => Some(a),
            Entry::Batch(_) => None,
        }
    }

    /// Every leaf with its dotted path, in key order.
    pub fn leaves(&self) -> Vec<(String, &Array)> {
        let mut out = Vec::new();
        self.collect_leaves("", &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        for (k, v) in &self.entries {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Entry::Array(a) => out.push((path, a)),
                Entry::Batch(b) => b.collect_leaves(&path, out),
            }
        }
    }

    /// Leading dimension shared by all leaves, or `None` if there are no leaves.
    pub fn len(&self) -> Option<usize> {
        self.validate().ok().flatten()
    }

    /// Walk every leaf and check the shared leading dimension.
    pub fn validate(&self) -> Result<Option<usize>, BatchError> {
        let mut rows = None;
        for (path, a) in self.leaves() {
            match rows {
                None => rows = Some(a.rows()),
                Some(r) if r != a.rows() => {
                    return Err(BatchError::LeadingDimMismatch {
                        field: path,
                        expected: r,
                        found: a.rows(),
                    })
                }
                _ => {}
            }
        }
        Ok(rows)
    }

    /// Number of rows, treating a leafless batch as zero rows.
    pub fn rows(&self) -> usize {
        self.len().unwrap_or(0)
    }

    /// Gather rows. Row `i` of the result is row `indices[i]` of `self`.
    pub fn select(&self, indices: &[usize]) -> Result<Batch, BatchError> {
        let rows = self.validate()?.unwrap_or(0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(BatchError::IndexOutOfRange {
                index: bad,
                len: rows,
            });
        }
        self.select_unchecked(indices)
    }

    fn select_unchecked(&self, indices: &[usize]) -> Result<Batch, BatchError> {
        let mut out = Batch::new();
        for (k, v) in &self.entries {
            let e = match v {
                Entry::Array(a) => Entry::Array(a.gather(indices)?),
                Entry::Batch(b) => Entry::Batch(b.select_unchecked(indices)?),
            };
            out.entries.insert(k.clone(), e);
        }
        Ok(out)
    }

    /// Concatenate structure-matched batches along the leading dimension.
    /// Batches with no entries are skipped.
    pub fn concat(parts: &[Batch]) -> Result<Batch, BatchError> {
        let live: Vec<&Batch> = parts.iter().filter(|b| !b.is_empty()).collect();
        match live.len() {
            0 => Ok(Batch::new()),
            1 => {
                live[0].validate()?;
                Ok(live[0].clone())
            }
            _ => {
                for b in &live {
                    b.validate()?;
                }
                concat_refs(&live, "")
            }
        }
    }

    /// Chunks of at most `size` rows covering every row exactly once. With
    /// `shuffle`, rows are first permuted by a generator seeded with `seed`.
    pub fn split(&self, size: usize, shuffle: bool, seed: u64) -> Result<Vec<Batch>, BatchError> {
        if size == 0 {
            return Err(BatchError::InvalidArgument("split size must be >= 1".into()));
        }
        let rows = self.validate()?.unwrap_or(0);
        if rows == 0 {
            return Ok(Vec::new());
        }
        let mut order: Vec<usize> = (0..rows).collect();
        if shuffle {
            SplitMix64::new(seed).shuffle(&mut order);
        } else if size >= rows {
            return Ok(vec![self.clone()]);
        }
        order
            .chunks(size)
            .map(|chunk| self.select_unchecked(chunk))
            .collect()
    }

    /// Stack `depth` consecutive frames of `field` per row.
    ///
    /// `prev[i]` is the row holding the predecessor of row `i`; a row that
    /// starts an episode is its own predecessor. Entry `[i, depth - 1]` is row
    /// `i` itself and `[i, 0]` the oldest frame.
    pub fn stack_fields(
        &self,
        field: &str,
        depth: usize,
        pad: PadMode,
        prev: &[usize],
    ) -> Result<Array, BatchError> {
        if depth == 0 {
            return Err(BatchError::InvalidArgument("depth must be >= 1".into()));
        }
        let src = self
            .array(field)
            .ok_or_else(|| BatchError::MissingField(field.to_string()))?;
        let rows = src.rows();
        if prev.len() != rows {
            return Err(BatchError::InvalidArgument(format!(
                "predecessor map has {} entries for {} rows",
                prev.len(),
                rows
            )));
        }
        if let Some(&bad) = prev.iter().find(|&&p| p >= rows) {
            return Err(BatchError::IndexOutOfRange {
                index: bad,
                len: rows,
            });
        }
        let w = src.row_len();
        let mut data = src.data.empty_like(rows * depth * w);
        let mut chain = vec![0usize; depth];
        let mut real = vec![true; depth];
        for i in 0..rows {
            let mut cur = i;
            let mut reached_start = false;
            for j in (0..depth).rev() {
                chain[j] = cur;
                real[j] = !reached_start;
                if prev[cur] == cur {
                    reached_start = true;
                } else {
                    cur = prev[cur];
                }
            }
            for j in 0..depth {
                if real[j] || pad == PadMode::Edge {
                    data.extend_from(&src.data, chain[j] * w, (chain[j] + 1) * w);
                } else {
                    data.extend_zeros(w);
                }
            }
        }
        let mut shape = vec![rows, depth];
        shape.extend_from_slice(src.trailing_shape());
        Ok(Array { shape, data })
    }
}

fn concat_refs(parts: &[&Batch], prefix: &str) -> Result<Batch, BatchError> {
    let first = parts[0];
    let mut out = Batch::new();
    for b in &parts[1..] {
        if !b.entries.keys().eq(first.entries.keys()) {
            return Err(BatchError::StructureMismatch(format!(
                "key sets differ under `{}`",
                if prefix.is_empty() { "<root>" } else { prefix }
            )));
        }
    }
    for (k, v) in &first.entries {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let e = match v {
            Entry::Array(_) => {
                let arrays = parts
                    .iter()
                    .map(|b| match &b.entries[k] {
                        Entry::Array(a) => Ok(a),
                        Entry::Batch(_) => Err(BatchError::StructureMismatch(format!(
                            "`{path}` is an array in one part and a batch in another"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Entry::Array(Array::concat(&arrays).map_err(|e| match e {
                    BatchError::StructureMismatch(m) => {
                        BatchError::StructureMismatch(format!("`{path}`: {m}"))
                    }
                    other => other,
                })?)
            }
            Entry::Batch(_) => {
                let subs = parts
                    .iter()
                    .map(|b| match &b.entries[k] {
                        Entry::Batch(s) => Ok(s),
                        Entry::Array(_) => Err(BatchError::StructureMismatch(format!(
                            "`{path}` is a batch in one part and an array in another"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Entry::Batch(concat_refs(&subs, &path)?)
            }
        };
        out.entries.insert(k.clone(), e);
    }
    Ok(out)
}
