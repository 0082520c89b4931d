//! Little-endian tensor container.
//!
//! ```text
//! magic   "RMDN"          4 bytes
//! version u16 = 1
//! count   u32
//! record* name_len u16, name (UTF-8, ASCII enforced on write),
//!         dtype u8 (0 = f64, 1 = f32, 2 = i64), ndim u8, dims u64 × ndim,
//!         payload: row-major values
//! ```

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RMDN";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("invalid record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::F32(_) => 1,
            TensorData::I64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f64(name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            data: TensorData::F64(data),
        }
    }

    pub fn i64(name: impl Into<String>, dims: &[usize], data: Vec<i64>) -> Self {
        NamedTensor {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            data: TensorData::I64(data),
        }
    }

    pub fn scalar_f64(name: impl Into<String>, v: f64) -> Self {
        Self::f64(name, &[1], vec![v])
    }

    pub fn scalar_i64(name: impl Into<String>, v: i64) -> Self {
        Self::i64(name, &[1], vec![v])
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            _ => None,
        }
    }
}

pub fn encode(records: &[NamedTensor]) -> Result<Vec<u8>, ContainerError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(records.len())
        .map_err(|_| ContainerError::Record("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        if !r.name.is_ascii() || r.name.is_empty() {
            return Err(ContainerError::Record(format!(
                "name {:?} must be non-empty ASCII",
                r.name
            )));
        }
        if !seen.insert(r.name.as_str()) {
            return Err(ContainerError::Record(format!("duplicate name {:?}", r.name)));
        }
        let expect: u64 = r.dims.iter().product();
        if expect != r.data.len() as u64 {
            return Err(ContainerError::Record(format!(
                "{}: dims {:?} hold {expect} values, payload has {}",
                r.name,
                r.dims,
                r.data.len()
            )));
        }
        let name_len = u16::try_from(r.name.len())
            .map_err(|_| ContainerError::Record("name too long".into()))?;
        let ndim = u8::try_from(r.dims.len())
            .map_err(|_| ContainerError::Record("too many dims".into()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.data.dtype());
        out.push(ndim);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &r.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Format {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], ContainerError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn err(&self, offset: usize, message: String) -> ContainerError {
        ContainerError::Format { offset, message }
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>, ContainerError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err(0, "bad magic".into()));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(r.array("record count")?);
    let mut out = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| r.err(start + 2, "name is not UTF-8".into()))?
            .to_string();
        let dtype_at = r.pos;
        let dtype = r.array::<1>("dtype")?[0];
        let ndim = r.array::<1>("ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(r.array("dim")?));
        }
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| r.err(dtype_at + 2, "dims overflow".into()))?;
        let width = match dtype {
            0 | 2 => 8,
            1 => 4,
            other => return Err(r.err(dtype_at, format!("unknown dtype {other}"))),
        };
        let bytes_len = n
            .checked_mul(width)
            .ok_or_else(|| r.err(dtype_at + 2, "payload size overflow".into()))?;
        let bytes = r.take(bytes_len, "payload")?;
        let data = match dtype {
            0 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        out.push(NamedTensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(r.err(r.pos, "trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn write_container(path: impl AsRef<Path>, records: &[NamedTensor]) -> Result<(), ContainerError> {
    let bytes = encode(records)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>, ContainerError> {
    decode(&std::fs::read(path)?)
}

/// Looks up a record by name.
pub fn find<'a>(records: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor, ContainerError> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| ContainerError::Record(format!("missing record {name:?}")))
}

pub fn find_f64<'a>(records: &'a [NamedTensor], name: &str) -> Result<&'a [f64], ContainerError> {
    find(records, name)?
        .as_f64()
        .ok_or_else(|| ContainerError::Record(format!("{name:?} is not f64")))
}

pub fn find_i64<'a>(records: &'a [NamedTensor], name: &str) -> Result<&'a [i64], ContainerError> {
    find(records, name)?
        .as_i64()
        .ok_or_else(|| ContainerError::Record(format!("{name:?} is not i64")))
}
