//! `HVX1` binary arrays.
//!
//! Layout: magic `HVX1`, dtype byte (0 = f64, 1 = complex128 as interleaved
//! re/im), ndim byte, `ndim` little-endian u64 dims, then the row-major
//! little-endian payload.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HVX1";
const HEADER_FIXED: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    C128(Vec<Complex64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_code(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::C128(_) => 1,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "float64",
            ArrayData::C128(_) => "complex128",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<u64>,
    pub data: ArrayData,
}

#[derive(Debug, Error)]
pub enum ArrayFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed array at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("array has {len} elements but dims {dims:?}")]
    Shape { dims: Vec<u64>, len: usize },
}

fn format_err(offset: usize, reason: impl Into<String>) -> ArrayFileError {
    ArrayFileError::Format {
        offset,
        reason: reason.into(),
    }
}

impl Array {
    pub fn new(dims: Vec<u64>, data: ArrayData) -> Result<Self, ArrayFileError> {
        let n = element_count(&dims);
        if dims.is_empty() || dims.len() > u8::MAX as usize || n != Some(data.len() as u64) {
            return Err(ArrayFileError::Shape { dims, len: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn vector_f64(v: Vec<f64>) -> Self {
        Self {
            dims: vec![v.len() as u64],
            data: ArrayData::F64(v),
        }
    }

    pub fn vector_c128(v: Vec<Complex64>) -> Self {
        Self {
            dims: vec![v.len() as u64],
            data: ArrayData::C128(v),
        }
    }

    /// Row-major `rows × cols` real matrix.
    pub fn matrix_f64(rows: Vec<Vec<f64>>, cols: usize) -> Result<Self, ArrayFileError> {
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(vec![n as u64, cols as u64], ArrayData::F64(flat))
    }

    pub fn encode(&self) -> Vec<u8> {
        let elem = match self.data {
            ArrayData::F64(_) => 8,
            ArrayData::C128(_) => 16,
        };
        let mut out = Vec::with_capacity(HEADER_FIXED + 8 * self.dims.len() + elem * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.dtype_code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::C128(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArrayFileError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(format_err(0, "missing HVX1 magic"));
        }
        let dtype = *bytes.get(4).ok_or_else(|| format_err(4, "truncated before dtype"))?;
        let elem = match dtype {
            0 => 8,
            1 => 16,
            d => return Err(format_err(4, format!("unknown dtype code {d}"))),
        };
        let ndim = *bytes.get(5).ok_or_else(|| format_err(5, "truncated before ndim"))? as usize;
        if ndim == 0 {
            return Err(format_err(5, "zero-dimensional arrays are not supported"));
        }
        let mut dims = Vec::with_capacity(ndim);
        for k in 0..ndim {
            let at = HEADER_FIXED + 8 * k;
            let raw = bytes
                .get(at..at + 8)
                .ok_or_else(|| format_err(at, format!("truncated inside dim {k}")))?;
            dims.push(u64::from_le_bytes(raw.try_into().expect("slice of length 8")));
        }
        let start = HEADER_FIXED + 8 * ndim;
        let n = element_count(&dims)
            .and_then(|n| n.checked_mul(elem as u64))
            .ok_or_else(|| format_err(HEADER_FIXED, format!("dims {dims:?} overflow")))?;
        let payload = &bytes[start..];
        if payload.len() as u64 != n {
            return Err(format_err(
                start,
                format!("payload has {} bytes, dims {dims:?} need {n}", payload.len()),
            ));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("chunk of length 8"));
        let data = match dtype {
            0 => ArrayData::F64(payload.chunks_exact(8).map(f).collect()),
            _ => ArrayData::C128(
                payload
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    /// Splits a real `n × cols` matrix into rows.
    pub fn rows_f64(&self, cols: usize) -> Result<Vec<&[f64]>, String> {
        match (&self.data, self.dims.as_slice()) {
            (ArrayData::F64(v), [_, c]) if *c as usize == cols => Ok(v.chunks_exact(cols).collect()),
            _ => Err(format!(
                "expected a float64 N×{cols} array, got {} with dims {:?}",
                self.data.dtype_name(),
                self.dims
            )),
        }
    }
}

fn element_count(dims: &[u64]) -> Option<u64> {
    dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

pub fn read_array(path: &Path) -> Result<Array, ArrayFileError> {
    let bytes = std::fs::read(path).map_err(|source| ArrayFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Array::decode(&bytes)
}

pub fn write_array(path: &Path, array: &Array) -> Result<(), ArrayFileError> {
    std::fs::write(path, array.encode()).map_err(|source| ArrayFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}
