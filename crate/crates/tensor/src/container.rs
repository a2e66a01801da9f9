//! `.patn` binary tensor container.
//!
//! Layout (all integers little-endian):
//! `"PATN"` · version `u32` = 1 · dtype `u8` (1 = f32, 2 = f64) · rank `u32`
//! · rank × extent `u64` · row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const PATN_MAGIC: &[u8; 4] = b"PATN";
pub const PATN_VERSION: u32 = 1;

/// A decoded tensor of either on-disk dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to the requested element type; lossless when the stored
    /// dtype already matches.
    pub fn into_tensor<T: Element>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(PATN_MAGIC);
    out.extend_from_slice(&PATN_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let bad = |m: &str| TensorError::Format(m.to_string());
    if bytes.len() < 13 || &bytes[..4] != PATN_MAGIC {
        return Err(bad("missing PATN magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PATN_VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(bytes[8])
        .ok_or_else(|| TensorError::Format(format!("unknown dtype code {}", bytes[8])))?;
    let rank = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rank > 4 {
        return Err(TensorError::RankTooLarge(rank));
    }
    let header = 13 + 8 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| {
            let at = 13 + 8 * i;
            u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
        })
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| bad("extent overflow"))?;
    let payload = &bytes[header..];
    if payload.len() != count * dtype.size() {
        return Err(TensorError::Format(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count * dtype.size()
        )));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(
            &shape,
            payload.chunks_exact(4).map(f32::read_le).collect(),
        )?),
        DType::F64 => AnyTensor::F64(Tensor::new(
            &shape,
            payload.chunks_exact(8).map(f64::read_le).collect(),
        )?),
    })
}

pub fn write_patn<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    f.sync_data()?;
    Ok(())
}

pub fn read_patn_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}

/// Reads a container and converts it to `T`.
pub fn read_patn<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(read_patn_any(path)?.into_tensor())
}
