//! Portable weight container.
//!
//! ```text
//! magic   8 bytes  "IMACTNS1"
//! count   u32
//! count x {
//!   name_len u16, name (UTF-8)
//!   dtype    u8   (0 = f32)
//!   ndim     u8
//!   dims     ndim x u32
//!   payload  prod(dims) values
//! }
//! ```
//!
//! All integers and payload values are little-endian.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IMACTNS1";
const DTYPE_F32: u8 = 0;

/// Tensors in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let raw = name.as_bytes();
            let len = u16::try_from(raw.len())
                .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
            let ndim = u8::try_from(t.shape.len())
                .map_err(|_| Error::Shape(format!("{name}: too many dimensions")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(raw);
            out.push(DTYPE_F32);
            out.push(ndim);
            for &d in &t.shape {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Shape(format!("{name}: dimension {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, path)
    }

    /// Parses an in-memory image; `path` only labels errors.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected IMACTNS1"));
        }
        let count = r.u32()?;
        let mut file = TensorFile::default();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, at as u64 + 2, "tensor name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::format(
                    path,
                    dtype_at as u64,
                    format!("unsupported dtype {dtype} for '{name}'"),
                ));
            }
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(path, r.pos as u64, "tensor size overflows"))?;
            let payload = r.take(n)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            file.tensors.push((name, Tensor { shape, data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                path,
                r.pos as u64,
                "trailing bytes after last tensor",
            ));
        }
        Ok(file)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                self.pos as u64,
                format!(
                    "truncated: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
