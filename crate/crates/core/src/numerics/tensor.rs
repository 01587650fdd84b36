use rand::Rng;

use super::Scalar;
use crate::error::{shape_err, Result};

/// Dense row-major tensor.
///
/// `shape.iter().product() == data.len()` and every extent is at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(shape_err!("rank-0 tensors are not supported"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(shape_err!("extent of axis {axis} is zero in {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let n = check_extents(&shape)?;
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Panics on a zero extent; use for shapes already validated upstream.
    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = check_extents(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Independent uniform draws from `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let n = check_extents(&shape).expect("invalid tensor shape");
        let data = (0..n)
            .map(|_| S::from_f64(rng.random_range(lo..hi)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Number of rows when the tensor is viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = check_extents(&shape)?;
        if n != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
                acc * e + i
            })
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: S) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "elementwise op on {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference of primal values.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.value() - b.value()).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the rows `[start, start + len)` of a `[rows, last_dim]` view.
    pub fn row_block(&self, start: usize, len: usize) -> Result<Self> {
        let d = self.last_dim();
        if start + len > self.rows() || len == 0 {
            return Err(shape_err!(
                "row block {start}..{} out of range for {} rows",
                start + len,
                self.rows()
            ));
        }
        Tensor::from_vec([len, d], self.data[start * d..(start + len) * d].to_vec())
    }
}

impl Tensor<f64> {
    /// FNV-1a over the little-endian bytes of every element.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::from_vec([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec([2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::from_vec(Vec::new(), vec![1.0]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_vec([2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.get(&[1, 0]), 3.0);
        assert_eq!(t.get(&[0, 2]), 2.0);
        let r = t.row_block(1, 1).unwrap();
        assert_eq!(r.data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::from_vec([2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.clone().reshape([3, 2]).unwrap().shape(), &[3, 2]);
        assert!(t.reshape([4, 2]).is_err());
    }
}
