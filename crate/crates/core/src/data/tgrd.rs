//! TGRD: a flat little-endian container of named f32/f64 tensors.
//!
//! ```text
//! "TGRD" | version u16 | count u32
//! per entry: name_len u16 | name | ndim u8 | dims u32 x ndim | dtype u8 | values
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u16 = 1;

/// A tensor of either supported precision.
#[derive(Clone, Debug, PartialEq)]
pub enum GridTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl GridTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            GridTensor::F32(t) => t.shape(),
            GridTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype_tag(&self) -> u8 {
        match self {
            GridTensor::F32(_) => f32::DTYPE_TAG,
            GridTensor::F64(_) => f64::DTYPE_TAG,
        }
    }

    /// Converts to `T`, casting if the stored precision differs.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            GridTensor::F32(t) => t.cast(),
            GridTensor::F64(t) => t.cast(),
        }
    }

    /// Returns the tensor only when it is stored as `T` already.
    pub fn exact<T: Scalar>(&self) -> Option<Tensor<T>> {
        (self.dtype_tag() == T::DTYPE_TAG).then(|| self.to_tensor())
    }
}

impl<T: Scalar> From<Tensor<T>> for GridTensor {
    fn from(t: Tensor<T>) -> Self {
        if T::DTYPE_TAG == f32::DTYPE_TAG {
            GridTensor::F32(t.cast())
        } else {
            GridTensor::F64(t.cast())
        }
    }
}

/// Ordered named entries of one container.
pub type GridEntries = Vec<(String, GridTensor)>;

fn push_values<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.reserve(t.numel() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode(entries: &[(String, GridTensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        if !name.is_ascii() || !seen.insert(name.as_str()) {
            return Err(Error::Format(format!("entry name {name:?} must be unique ASCII")));
        }
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("entry name {name:?} too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        let ndim = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("{name}: too many dimensions")))?;
        out.push(ndim);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(t.dtype_tag());
        match t {
            GridTensor::F32(t) => push_values(t, &mut out),
            GridTensor::F64(t) => push_values(t, &mut out),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption {
                offset: self.pos,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn values<T: Scalar>(&mut self, shape: Vec<usize>, what: &str) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let bytes = n
            .checked_mul(T::BYTES)
            .ok_or(Error::Corruption { offset: self.pos, detail: format!("{what}: size overflow") })?;
        let raw = self.take(bytes, what)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::new(shape, data)
    }
}

pub fn decode(bytes: &[u8]) -> Result<GridEntries> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected TGRD".into()));
    }
    r.pos = 4;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for i in 0..count {
        let start = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or(Error::Corruption { offset: start + 2, detail: format!("entry {i}: name is not ASCII") })?
            .to_string();
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dims")? as usize);
        }
        let tag_at = r.pos;
        let t = match r.u8("dtype")? {
            0 => GridTensor::F32(r.values(shape, &name)?),
            1 => GridTensor::F64(r.values(shape, &name)?),
            other => {
                return Err(Error::Corruption { offset: tag_at, detail: format!("{name}: unknown dtype tag {other}") })
            }
        };
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corruption { offset: r.pos, detail: "trailing bytes after last entry".into() });
    }
    Ok(entries)
}

pub fn write_grid_file(path: impl AsRef<Path>, entries: &[(String, GridTensor)]) -> Result<()> {
    fs::write(path, encode(entries)?)?;
    Ok(())
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<GridEntries> {
    decode(&fs::read(path)?)
}

/// Looks up an entry by name.
pub fn entry<'a>(entries: &'a [(String, GridTensor)], name: &str) -> Result<&'a GridTensor> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Format(format!("missing entry {name}")))
}
