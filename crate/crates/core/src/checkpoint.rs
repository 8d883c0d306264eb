//! The `VLPG` parameter payload format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      b"VLPG"
//! version    u32            (currently 1)
//! count      u32            number of tensors
//! per tensor:
//!   name_len u16, name      UTF-8
//!   rank     u8
//!   dims     rank × u32
//!   data     prod(dims) × f32, row-major
//! ```
//!
//! The encoded size of a parameter set is what every byte counter in the
//! federation reports.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VLPG";
pub const VERSION: u32 = 1;

/// A named dense tensor held in `f64`, quantized to `f32` on encode.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor {name}: dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(NamedTensor { name, dims, data })
    }
}

/// Size in bytes of the header and per-tensor metadata, excluding payload.
pub fn header_len(tensors: &[NamedTensor]) -> usize {
    12 + tensors
        .iter()
        .map(|t| 2 + t.name.len() + 1 + 4 * t.dims.len())
        .sum::<usize>()
}

pub fn encoded_len(tensors: &[NamedTensor]) -> usize {
    header_len(tensors) + 4 * tensors.iter().map(|t| t.data.len()).sum::<usize>()
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(encoded_len(tensors));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(fmt_err)?.to_le_bytes());
    for t in tensors {
        let name_len = u16::try_from(t.name.len()).map_err(fmt_err)?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(u8::try_from(t.dims.len()).map_err(fmt_err)?);
        for &d in &t.dims {
            out.extend_from_slice(&u32::try_from(d).map_err(fmt_err)?.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated payload: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected VLPG".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(fmt_err)?
            .to_owned();
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name}: dims overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

/// Round every value through `f32`, the precision of the wire.
pub fn quantize(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = f64::from(*v as f32));
}
