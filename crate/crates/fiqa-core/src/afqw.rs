//! AFQW tensor container: a flat binary format for named f32 tensors.
//!
//! Layout, all integers little-endian:
//!   magic "AFQW" | u32 version (1) | u32 tensor count
//!   per tensor: u16 name length | UTF-8 name | u8 rank | u64 dims... | u64 offset
//!   payload: contiguous f32 little-endian tensor data
//!
//! Offsets are relative to the start of the payload section. Version 1 stores
//! f32 only. The payload length must equal the sum of the declared tensor
//! byte lengths exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AFQW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected AFQW, found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated container while reading {context}")]
    Truncated { context: &'static str },
    #[error("malformed container: {0}")]
    Malformed(String),
}

/// A named tensor as stored in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

/// Borrowed view used when writing, so callers need not clone payloads.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a> {
    pub name: &'a str,
    pub dims: &'a [u64],
    pub data: &'a [f32],
}

fn elem_count(dims: &[u64]) -> Result<u64, FormatError> {
    dims.iter().try_fold(1u64, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| FormatError::Malformed(format!("dims {dims:?} overflow")))
    })
}

/// Writes tensors in the given order, payload packed contiguously.
pub fn write_tensors(path: &Path, tensors: &[TensorView<'_>]) -> Result<(), FormatError> {
    for t in tensors {
        let n = elem_count(t.dims)?;
        if n != t.data.len() as u64 {
            return Err(FormatError::Malformed(format!(
                "tensor `{}` has {} values but dims {:?} claim {n}",
                t.name,
                t.data.len(),
                t.dims
            )));
        }
        if t.name.len() > u16::MAX as usize {
            return Err(FormatError::Malformed(format!("tensor name `{}` too long", t.name)));
        }
        if t.dims.len() > u8::MAX as usize {
            return Err(FormatError::Malformed(format!("tensor `{}` rank too high", t.name)));
        }
    }
    if tensors.len() > u32::MAX as usize {
        return Err(FormatError::Malformed("too many tensors".into()));
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;

    let mut offset = 0u64;
    for t in tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.dims.len() as u8])?;
        for d in t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += 4 * t.data.len() as u64;
    }
    for t in tensors {
        for v in t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated { context });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }
}

/// Reads every tensor in the container, in header order.
pub fn read_tensors(path: &Path) -> Result<Vec<RawTensor>, FormatError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let count = cur.u32("tensor count")? as usize;

    struct Entry {
        name: String,
        dims: Vec<u64>,
        offset: u64,
        nelems: u64,
    }
    let mut entries = Vec::with_capacity(count);
    let mut total_bytes = 0u64;
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64("dims")?);
        }
        let offset = cur.u64("offset")?;
        let nelems = elem_count(&dims)?;
        total_bytes = total_bytes
            .checked_add(4 * nelems)
            .ok_or_else(|| FormatError::Malformed("payload size overflow".into()))?;
        entries.push(Entry { name, dims, offset, nelems });
    }

    let payload = &buf[cur.pos..];
    if (payload.len() as u64) < total_bytes {
        return Err(FormatError::Truncated { context: "payload" });
    }
    if payload.len() as u64 > total_bytes {
        return Err(FormatError::Malformed(format!(
            "payload has {} trailing bytes",
            payload.len() as u64 - total_bytes
        )));
    }

    let mut out = Vec::with_capacity(count);
    for e in entries {
        let end = e
            .offset
            .checked_add(4 * e.nelems)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or(FormatError::Truncated { context: "tensor payload" })?;
        let bytes = &payload[e.offset as usize..end as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RawTensor { name: e.name, dims: e.dims, data });
    }
    Ok(out)
}
