//! Flat binary tensor container.
//!
//! Layout, all little-endian:
//!
//! | field   | type          |
//! |---------|---------------|
//! | magic   | `b"DFTK"`     |
//! | version | `u32` (= 1)   |
//! | rank    | `u32`         |
//! | extents | `u64 × rank`  |
//! | dtype   | `u32` (f64 = 0, f32 = 1) |
//! | data    | row-major elements |

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFTK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
        }
    }
}

/// Element types that can be written to the container.
pub trait Storable: super::Scalar {
    const DTYPE: DType;
    fn put(self, out: &mut Vec<u8>);
}

impl Storable for f64 {
    const DTYPE: DType = DType::F64;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Storable for f32 {
    const DTYPE: DType = DType::F32;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// A tensor read back from disk in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F64(Tensor<f64>),
    F32(Tensor<f32>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F64(t) => t.shape(),
            StoredTensor::F32(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F64(_) => DType::F64,
            StoredTensor::F32(_) => DType::F32,
        }
    }

    /// Widening copy; exact for f32 data.
    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            StoredTensor::F64(t) => t.clone(),
            StoredTensor::F32(t) => t.map(|v| v as f64),
        }
    }
}

pub fn encode<S: Storable>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.extend_from_slice(&(S::DTYPE as u32).to_le_bytes());
    for &v in t.data() {
        v.put(&mut out);
    }
    out
}

pub fn write_tensor<S: Storable, W: Write>(mut w: W, t: &Tensor<S>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

fn take<const N: usize>(bytes: &[u8], pos: &mut usize) -> Result<[u8; N]> {
    let end = *pos + N;
    let slice = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Format(format!("truncated container at byte {}", *pos)))?;
    *pos = end;
    Ok(slice.try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<StoredTensor> {
    let mut pos = 0;
    if &take::<4>(bytes, &mut pos)? != MAGIC {
        return Err(Error::Format("bad magic, expected DFTK".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let rank = u32::from_le_bytes(take(bytes, &mut pos)?) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = u64::from_le_bytes(take(bytes, &mut pos)?);
        shape.push(usize::try_from(e).map_err(|_| Error::Format(format!("extent {e} too large")))?);
    }
    let tag = u32::from_le_bytes(take(bytes, &mut pos)?);
    let n: usize = shape.iter().product();
    let width = match tag {
        0 => 8,
        1 => 4,
        other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
    };
    let body = &bytes[pos..];
    if body.len() != n * width {
        return Err(Error::Format(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            body.len(),
            n * width
        )));
    }
    Ok(match tag {
        0 => StoredTensor::F64(Tensor::from_vec(
            shape,
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )?),
        _ => StoredTensor::F32(Tensor::from_vec(
            shape,
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )?),
    })
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<StoredTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save<S: Storable>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<StoredTensor> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec([2, 1], vec![1.5f64, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"DFTK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[28..32].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 48);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::from_vec([3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut b = encode(&t);
        assert_eq!(decode(&b).unwrap(), StoredTensor::F32(t));
        b.pop();
        assert!(decode(&b).is_err());
        b[0] = b'X';
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..4, 1..5), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64).sin()).collect();
            let t = Tensor::from_vec(shape, data).unwrap();
            prop_assert_eq!(decode(&encode(&t)).unwrap(), StoredTensor::F64(t));
        }
    }
}
