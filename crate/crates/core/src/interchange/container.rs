//! The MGT1 tensor container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MGT1"
//! 4       4     u32 format version (1)
//! 8       8     u64 header length H
//! 16      8     u64 section count S
//! 24      H     header, UTF-8 JSON object
//! 24+H    ...   S index entries:
//!                 u32 name length L, L bytes UTF-8 name,
//!                 u8 dtype (1 = f32, 2 = f64), u8 rank R,
//!                 R × u64 dims, u64 absolute offset, u64 byte length
//! ...     ...   zero padding to a 64-byte boundary
//! ...     ...   section payloads, each starting on a 64-byte boundary,
//!               row-major little-endian IEEE-754
//! ```
//!
//! All integers are little-endian.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::InterchangeError;
use crate::geometry::PcaMode;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"MGT1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: usize = 64;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(format!("unsupported dtype '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape");
        Self {
            shape,
            data: TensorData::F64(data),
        }
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape");
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    /// Stores a matrix at the requested precision.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>, dtype: Dtype) -> Self {
        let shape = vec![m.rows(), m.cols()];
        match dtype {
            Dtype::F64 => Self::f64(shape, m.as_slice().iter().map(|v| v.as_f64()).collect()),
            Dtype::F32 => Self::f32(shape, m.as_slice().iter().map(|v| v.as_f64() as f32).collect()),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size()
    }

    /// Values promoted to double precision (exact for f32).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, shape: Vec<usize>, bytes: &[u8]) -> Self {
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
        };
        Self { shape, data }
    }
}

fn default_mode() -> PcaMode {
    PcaMode::RowScaled
}

/// Container header. Unknown fields survive a read/write cycle in `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub n_experts: usize,
    #[serde(default)]
    pub d_model: usize,
    /// Storage precision of hidden states.
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_mode")]
    pub weighting_mode: PcaMode,
    #[serde(default)]
    pub creator: String,
    /// Tokens captured per entry of `layers`.
    #[serde(default)]
    pub token_counts: Vec<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn default_dtype() -> String {
    "f32".into()
}

impl Default for DumpHeader {
    fn default() -> Self {
        Self {
            model: String::new(),
            layers: Vec::new(),
            n_experts: 0,
            d_model: 0,
            dtype: default_dtype(),
            weighting_mode: default_mode(),
            creator: String::new(),
            token_counts: Vec::new(),
            extra: Map::new(),
        }
    }
}

/// One entry of the section index as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DumpContainer {
    pub header: DumpHeader,
    pub sections: Vec<(String, Tensor)>,
}

impl DumpContainer {
    pub fn new(header: DumpHeader) -> Self {
        Self {
            header,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.sections.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Index entries as `to_bytes` would lay them out.
    pub fn index(&self) -> Result<Vec<IndexEntry>, InterchangeError> {
        Ok(layout(self)?.1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, InterchangeError> {
        let (header_json, index, payload_start) = layout(self)?;
        let mut out =
            Vec::with_capacity(payload_start + self.sections.iter().map(|s| s.1.byte_len() + ALIGN).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for e in &index {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.length.to_le_bytes());
        }
        for ((_, t), e) in self.sections.iter().zip(&index) {
            out.resize(e.offset as usize, 0);
            t.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InterchangeError> {
        let (header, index) = read_index(bytes)?;
        let sections = index
            .into_iter()
            .map(|e| {
                let start = e.offset as usize;
                let end = start + e.length as usize;
                let t = Tensor::read_le(e.dtype, e.shape, &bytes[start..end]);
                (e.name, t)
            })
            .collect();
        Ok(Self { header, sections })
    }
}

fn padded(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn layout(c: &DumpContainer) -> Result<(Vec<u8>, Vec<IndexEntry>, usize), InterchangeError> {
    let header_json = serde_json::to_vec(&c.header).map_err(InterchangeError::Header)?;
    let mut index_len = 0usize;
    for (name, t) in &c.sections {
        if t.shape.len() > MAX_RANK {
            return Err(InterchangeError::ShapeMismatch {
                section: name.clone(),
                detail: format!("rank {} exceeds {MAX_RANK}", t.shape.len()),
            });
        }
        if t.shape.iter().product::<usize>() != t.len() {
            return Err(InterchangeError::ShapeMismatch {
                section: name.clone(),
                detail: format!("shape {:?} holds {} values", t.shape, t.len()),
            });
        }
        index_len += 4 + name.len() + 2 + 8 * t.shape.len() + 16;
    }
    let payload_start = padded(24 + header_json.len() + index_len);
    let mut offset = payload_start;
    let mut index = Vec::with_capacity(c.sections.len());
    for (name, t) in &c.sections {
        index.push(IndexEntry {
            name: name.clone(),
            dtype: t.dtype(),
            shape: t.shape.clone(),
            offset: offset as u64,
            length: t.byte_len() as u64,
        });
        offset = padded(offset + t.byte_len());
    }
    Ok((header_json, index, payload_start))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], InterchangeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| InterchangeError::Truncated(format!("{what} needs {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, InterchangeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, InterchangeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, InterchangeError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses and validates the header and index without decoding payloads.
pub fn read_index(bytes: &[u8]) -> Result<(DumpHeader, Vec<IndexEntry>), InterchangeError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(InterchangeError::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(InterchangeError::UnsupportedVersion(version));
    }
    let header_len = usize::try_from(cur.u64("header length")?)
        .map_err(|_| InterchangeError::Truncated("header length overflows".into()))?;
    let count = cur.u64("section count")?;
    let header_bytes = cur.take(header_len, "header")?;
    let header: DumpHeader = serde_json::from_slice(header_bytes).map_err(InterchangeError::Header)?;

    let mut index = Vec::new();
    for i in 0..count {
        let name_len = cur.u32("section name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "section name")?)
            .map_err(|_| InterchangeError::Malformed(format!("section {i} name is not UTF-8")))?
            .to_string();
        let code = cur.u8("dtype")?;
        let dtype = Dtype::from_code(code).ok_or_else(|| InterchangeError::UnsupportedDtype {
            section: name.clone(),
            code,
        })?;
        let rank = cur.u8("rank")? as usize;
        if rank > MAX_RANK {
            return Err(InterchangeError::ShapeMismatch {
                section: name,
                detail: format!("rank {rank} exceeds {MAX_RANK}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(cur.u64("dimension")?)
                .map_err(|_| InterchangeError::Malformed(format!("{name}: dimension overflows")))?;
            shape.push(d);
        }
        let offset = cur.u64("section offset")?;
        let length = cur.u64("section length")?;
        let expected = shape
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| InterchangeError::ShapeMismatch {
                section: name.clone(),
                detail: "shape overflows".into(),
            })?;
        if expected as u64 != length {
            return Err(InterchangeError::ShapeMismatch {
                section: name,
                detail: format!(
                    "shape {shape:?} of {} needs {expected} bytes, index declares {length}",
                    dtype.name()
                ),
            });
        }
        if offset % ALIGN as u64 != 0 {
            return Err(InterchangeError::Malformed(format!(
                "{name}: offset {offset} not {ALIGN}-byte aligned"
            )));
        }
        let end = offset.checked_add(length);
        if end.is_none_or(|e| e > bytes.len() as u64) {
            return Err(InterchangeError::Truncated(format!(
                "section {name} spans {offset}+{length} but file has {} bytes",
                bytes.len()
            )));
        }
        index.push(IndexEntry {
            name,
            dtype,
            shape,
            offset,
            length,
        });
    }
    Ok((header, index))
}
