//! Little-endian byte encoding shared by the binary file formats.
//!
//! Every container is `magic | u32 version | body | u32 crc32`, where the CRC
//! covers every byte before it.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed data: {0}")]
    Malformed(String),
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_header(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self::new();
        w.bytes(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// u32 length prefix followed by UTF-8 bytes.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// u64 length prefix followed by raw bytes.
    pub fn blob(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.bytes(v);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Append the CRC32 of everything written so far and return the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32(&self.buf);
        self.u32(crc);
        self.buf
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Verify the trailing CRC, magic and version; return a reader over the body.
    pub fn open(data: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self, WireError> {
        if data.len() < 12 {
            return Err(WireError::Truncated(data.len()));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let computed = crc32(body);
        if stored != computed {
            return Err(WireError::ChecksumMismatch { stored, computed });
        }
        if &body[..4] != magic {
            return Err(WireError::BadMagic { expected: *magic });
        }
        let mut r = Reader::new(body);
        r.pos = 4;
        let found = r.u32()?;
        if found != version {
            return Err(WireError::VersionMismatch { expected: version, found });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated(self.pos))?;
        if end > self.data.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        self.array().map(u64::from_le_bytes)
    }

    pub fn i64(&mut self) -> Result<i64, WireError> {
        self.array().map(i64::from_le_bytes)
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        self.array().map(f64::from_le_bytes)
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, WireError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| WireError::Malformed("invalid UTF-8 in name".into()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| WireError::Truncated(self.pos))?;
        self.take(n)
    }

    /// A u64 that will be used as an element count; bounded by the remaining bytes.
    pub fn count(&mut self, elem_size: usize) -> Result<usize, WireError> {
        let n = self.u64()?;
        let remaining = (self.data.len() - self.pos) as u64;
        if elem_size > 0 && n > remaining / elem_size as u64 {
            return Err(WireError::Truncated(self.pos));
        }
        Ok(n as usize)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), WireError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(WireError::Malformed(alloc::format!(
                "{} trailing bytes",
                self.remaining()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_crc_round_trip() {
        let mut w = Writer::with_header(b"TEST", 3);
        w.str("hello");
        w.f64(1.5);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, b"TEST", 3).unwrap();
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f64().unwrap(), 1.5);
        r.expect_end().unwrap();
    }

    #[test]
    fn detects_corruption_and_version() {
        let mut w = Writer::with_header(b"TEST", 1);
        w.u64(99);
        let bytes = w.finish();
        let mut bad = bytes.clone();
        bad[9] ^= 0x40;
        assert!(matches!(
            Reader::open(&bad, b"TEST", 1),
            Err(WireError::ChecksumMismatch { .. })
        ));
        assert!(matches!(
            Reader::open(&bytes, b"TEST", 2),
            Err(WireError::VersionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(
            Reader::open(&bytes[..6], b"TEST", 1),
            Err(WireError::Truncated(_))
        ));
    }
}
