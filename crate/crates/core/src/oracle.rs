//! Slow reference implementations used as ground truth.
//!
//! Plain loops with ascending reductions; nothing here calls the kernels it
//! is meant to check.

use crate::attention::WindowGrid;
use crate::error::{config_err, shape_err, Result};
use crate::numerics::Tensor;

/// Which keys each query may see.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    nq: usize,
    nk: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(nq: usize, nk: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != nq * nk {
            return Err(shape_err!("mask of {} entries for {nq}x{nk}", allowed.len()));
        }
        let m = Self { nq, nk, allowed };
        if let Some(r) = (0..nq).find(|&r| !m.row(r).contains(&true)) {
            return Err(config_err!("mask row {r} allows no key"));
        }
        Ok(m)
    }

    pub fn all(nq: usize, nk: usize) -> Self {
        Self {
            nq,
            nk,
            allowed: vec![true; nq * nk],
        }
    }

    /// Tokens (row-major map order) see exactly the tokens of their window.
    pub fn block_diagonal(grid: &WindowGrid) -> Self {
        let m = grid.token_count();
        let win: Vec<usize> = (0..m).map(|i| grid.window_of(i)).collect();
        let mut allowed = vec![false; m * m];
        for i in 0..m {
            for j in 0..m {
                allowed[i * m + j] = win[i] == win[j];
            }
        }
        Self { nq: m, nk: m, allowed }
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.allowed[r * self.nk..(r + 1) * self.nk]
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.nk + k]
    }
}

fn dims(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let ok = q.rank() == 2
        && k.rank() == 2
        && v.rank() == 2
        && q.shape()[1] == k.shape()[1]
        && k.shape() == v.shape();
    if !ok {
        return Err(shape_err!(
            "q {:?}, k {:?}, v {:?} must be [Nq, d], [Nk, d], [Nk, d]",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    Ok((q.shape()[0], k.shape()[0], q.shape()[1]))
}

/// Single-head `softmax(q kᵀ / √d) v`.
pub fn full_attention_ref(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (nq, nk, _) = dims(q, k, v)?;
    masked_attention_ref(q, k, v, &AttentionMask::all(nq, nk))
}

/// Attention with disallowed scores treated as −∞.
pub fn masked_attention_ref(q: &Tensor, k: &Tensor, v: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    let (nq, nk, d) = dims(q, k, v)?;
    if mask.nq != nq || mask.nk != nk {
        return Err(shape_err!(
            "mask is {}x{}, attention is {nq}x{nk}",
            mask.nq,
            mask.nk
        ));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; nq * d];
    for i in 0..nq {
        if !mask.row(i).contains(&true) {
            return Err(config_err!("mask row {i} allows no key"));
        }
        let mut scores = vec![f64::NEG_INFINITY; nk];
        for j in 0..nk {
            if mask.allows(i, j) {
                let mut s = 0.0;
                for c in 0..d {
                    s += qd[i * d + c] * kd[j * d + c];
                }
                scores[j] = s * scale;
            }
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = if s.is_finite() { (*s - max).exp() } else { 0.0 };
            denom += *s;
        }
        for j in 0..nk {
            let w = scores[j] / denom;
            for c in 0..d {
                out[i * d + c] += w * vd[j * d + c];
            }
        }
    }
    Tensor::from_vec([nq, d], out)
}

/// Multi-head form: columns split into `heads` contiguous blocks, each
/// attended independently with the given mask.
pub fn masked_multi_head_ref(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let (nq, nk, d) = dims(q, k, v)?;
    if heads == 0 || d % heads != 0 {
        return Err(config_err!("{d} columns do not split into {heads} heads"));
    }
    let hd = d / heads;
    let slice = |t: &Tensor, rows: usize, h: usize| -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows * hd);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * d + h * hd..r * d + (h + 1) * hd]);
        }
        Tensor::from_vec([rows, hd], data)
    };
    let mut out = vec![0.0; nq * d];
    for h in 0..heads {
        let o = masked_attention_ref(&slice(q, nq, h)?, &slice(k, nk, h)?, &slice(v, nk, h)?, mask)?;
        for r in 0..nq {
            out[r * d + h * hd..r * d + (h + 1) * hd].copy_from_slice(&o.data()[r * hd..(r + 1) * hd]);
        }
    }
    Tensor::from_vec([nq, d], out)
}

/// Mean over each non-overlapping region of a `[T′, H′, W′, D]` map.
pub fn adaptive_avg_pool3d_ref(x: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    let &[t, h, w, d] = x.shape() else {
        return Err(shape_err!("expected [T, H, W, D], got {:?}", x.shape()));
    };
    let ext = [t, h, w];
    for a in 0..3 {
        if target[a] == 0 || ext[a] % target[a] != 0 {
            return Err(shape_err!("target {target:?} does not divide extent {ext:?}"));
        }
    }
    let r = [t / target[0], h / target[1], w / target[2]];
    let count = (r[0] * r[1] * r[2]) as f64;
    let mut out = Vec::with_capacity(target.iter().product::<usize>() * d);
    for a in 0..target[0] {
        for b in 0..target[1] {
            for c in 0..target[2] {
                let mut acc = vec![0.0; d];
                for i in a * r[0]..(a + 1) * r[0] {
                    for j in b * r[1]..(b + 1) * r[1] {
                        for l in c * r[2]..(c + 1) * r[2] {
                            for ch in 0..d {
                                acc[ch] += x.get(&[i, j, l, ch]);
                            }
                        }
                    }
                }
                out.extend(acc.into_iter().map(|s| s / count));
            }
        }
    }
    Tensor::from_vec([target[0], target[1], target[2], d], out)
}

/// Unpadded 2D cross-correlation of `[H, W, C_in]` with `[k_h, k_w, C_in, C_out]`.
pub fn conv2d_ref(x: &Tensor, kernel: &Tensor, stride: [usize; 2]) -> Result<Tensor> {
    let &[h, w, cin] = x.shape() else {
        return Err(shape_err!("expected [H, W, C_in], got {:?}", x.shape()));
    };
    let &[kh, kw, kcin, cout] = kernel.shape() else {
        return Err(shape_err!("expected [k_h, k_w, C_in, C_out], got {:?}", kernel.shape()));
    };
    if kcin != cin || kh > h || kw > w || stride.contains(&0) {
        return Err(shape_err!(
            "kernel {:?} stride {stride:?} does not fit input {:?}",
            kernel.shape(),
            x.shape()
        ));
    }
    let (oh, ow) = ((h - kh) / stride[0] + 1, (w - kw) / stride[1] + 1);
    let mut out = Tensor::zeros([oh, ow, cout]);
    for i in 0..oh {
        for j in 0..ow {
            for co in 0..cout {
                let mut s = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        for ci in 0..cin {
                            s += x.get(&[i * stride[0] + a, j * stride[1] + b, ci])
                                * kernel.get(&[a, b, ci, co]);
                        }
                    }
                }
                out.set(&[i, j, co], s);
            }
        }
    }
    Ok(out)
}
