//! Dense kernels. Every reduction runs in ascending index order so results
//! are bit-stable across runs and thread counts.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// `c[m×n] = a[m×k] · b[k×n]` on raw row-major slices.
pub(crate) fn gemm<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err!(
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::from_vec([m, n], gemm(a.data(), b.data(), m, k, n))
}

/// In-place max-shifted softmax over one row.
pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v.value() > max.value() {
            max = v;
        }
    }
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    let d = x.last_dim();
    for row in out.data_mut().chunks_mut(d) {
        softmax_in_place(row);
    }
    out
}

pub const LN_EPS: f64 = 1e-5;

/// Layer normalization over the last axis with population variance.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    shift: &Tensor<S>,
    eps: f64,
) -> Result<Tensor<S>> {
    let d = x.last_dim();
    if gain.numel() != d || shift.numel() != d {
        return Err(shape_err!(
            "layer_norm over last axis {d} with gain {:?} and shift {:?}",
            gain.shape(),
            shift.shape()
        ));
    }
    let n = S::from_f64(d as f64);
    let eps = S::from_f64(eps);
    let (g, b) = (gain.data(), shift.data());
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let mut mean = S::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean /= n;
        let mut var = S::zero();
        for &v in row.iter() {
            let c = v - mean;
            var += c * c;
        }
        var /= n;
        let inv = S::one() / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * g[j] + b[j];
        }
    }
    Ok(out)
}

/// Exact GELU, `x·Φ(x)` with `Φ` from `erf`.
pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    x.map(|v| v * half * (S::one() + (v * inv_sqrt2).erf()))
}

/// Affine map over the last axis. `weight` is `[d_in, d_out]`.
pub fn linear<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    if weight.rank() != 2 || weight.shape()[0] != x.last_dim() {
        return Err(shape_err!(
            "linear on input {:?} with weight {:?}",
            x.shape(),
            weight.shape()
        ));
    }
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    let rows = x.rows();
    let mut data = gemm(x.data(), weight.data(), rows, din, dout);
    if let Some(b) = bias {
        if b.numel() != dout {
            return Err(shape_err!(
                "linear bias {:?} for output width {dout}",
                b.shape()
            ));
        }
        for row in data.chunks_mut(dout) {
            for (v, &bj) in row.iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::from_vec(shape, data)
}
