//! Minimal binary tensor container.
//!
//! ```text
//! magic   8 bytes   "CGSCTEN1" (f64 payload) or "CGSCLAB1" (i32 payload)
//! ndims   u8        2 or 3
//! dims    ndims × u32, little-endian
//! payload row-major (last index fastest), little-endian
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

pub const REAL_MAGIC: &[u8; 8] = b"CGSCTEN1";
pub const LABEL_MAGIC: &[u8; 8] = b"CGSCLAB1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("header truncated after {0} bytes")]
    TruncatedHeader(usize),
    #[error("payload has {found} bytes, expected {expected}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} bytes after the payload")]
    TrailingBytes(usize),
    #[error("unsupported number of dimensions: {0}")]
    UnsupportedNdims(usize),
    #[error("dimension {0} does not fit in 32 bits")]
    DimensionTooLarge(usize),
    #[error("{path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(ArrayD<f64>),
    Labels(ArrayD<i32>),
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Real(a) => a.shape(),
            Tensor::Labels(a) => a.shape(),
        }
    }
}

fn check_ndims(shape: &[usize]) -> Result<(), TensorError> {
    if !(2..=3).contains(&shape.len()) {
        return Err(TensorError::UnsupportedNdims(shape.len()));
    }
    Ok(())
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>, TensorError> {
    let shape = t.shape();
    check_ndims(shape)?;
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(9 + 4 * shape.len() + 8 * count);
    out.extend_from_slice(match t {
        Tensor::Real(_) => REAL_MAGIC,
        Tensor::Labels(_) => LABEL_MAGIC,
    });
    out.push(shape.len() as u8);
    for &d in shape {
        let d32 = u32::try_from(d).map_err(|_| TensorError::DimensionTooLarge(d))?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    // `iter()` walks in logical row-major order for any memory layout.
    match t {
        Tensor::Real(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::Labels(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < 9 {
        if bytes.len() >= 8 {
            check_magic(&bytes[..8])?;
        }
        return Err(TensorError::TruncatedHeader(bytes.len()));
    }
    let is_real = check_magic(&bytes[..8])?;
    let ndims = bytes[8] as usize;
    if !(2..=3).contains(&ndims) {
        return Err(TensorError::UnsupportedNdims(ndims));
    }
    let header = 9 + 4 * ndims;
    if bytes.len() < header {
        return Err(TensorError::TruncatedHeader(bytes.len()));
    }
    let dims: Vec<usize> = bytes[9..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let elem: usize = if is_real { 8 } else { 4 };
    let expected = dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    let found = bytes.len() - header;
    if found < expected {
        return Err(TensorError::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(TensorError::TrailingBytes(found - expected));
    }
    let payload = &bytes[header..];
    let shape = IxDyn(&dims);
    Ok(if is_real {
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::Real(ArrayD::from_shape_vec(shape, data).expect("length checked"))
    } else {
        let data = payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::Labels(ArrayD::from_shape_vec(shape, data).expect("length checked"))
    })
}

fn check_magic(magic: &[u8]) -> Result<bool, TensorError> {
    if magic == REAL_MAGIC {
        Ok(true)
    } else if magic == LABEL_MAGIC {
        Ok(false)
    } else {
        Err(TensorError::BadMagic(magic.try_into().unwrap()))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    decode_tensor(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<(), TensorError> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}
