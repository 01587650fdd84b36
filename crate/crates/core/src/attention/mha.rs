use super::params::{check_heads, AttentionParams};
use crate::error::{shape_err, Result};
use crate::numerics::{gemm, gemm_nt, softmax_in_place, Scalar, Tensor};

/// Scaled dot-product attention over already-projected rows.
///
/// `q` is `[nq, d]`, `k` and `v` are `[nk, d]`; heads split `d` into
/// contiguous column blocks. When `weights` is given, the per-head
/// `[nq, nk]` attention matrices are pushed onto it.
pub(crate) fn attend<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
    mut weights: Option<&mut Vec<Tensor<S>>>,
) -> Vec<S> {
    let hd = d / heads;
    let scale = S::from_f64(1.0 / (hd as f64).sqrt());
    let cols = |src: &[S], rows: usize, h: usize| -> Vec<S> {
        let mut out = Vec::with_capacity(rows * hd);
        for r in 0..rows {
            out.extend_from_slice(&src[r * d + h * hd..r * d + (h + 1) * hd]);
        }
        out
    };
    let mut out = vec![S::zero(); nq * d];
    for h in 0..heads {
        let (qh, kh, vh) = (cols(q, nq, h), cols(k, nk, h), cols(v, nk, h));
        let mut scores = gemm_nt(&qh, &kh, nq, hd, nk);
        for row in scores.chunks_mut(nk) {
            for s in row.iter_mut() {
                *s *= scale;
            }
            softmax_in_place(row);
        }
        let oh = gemm(&scores, &vh, nq, nk, hd);
        for r in 0..nq {
            out[r * d + h * hd..r * d + (h + 1) * hd].copy_from_slice(&oh[r * hd..(r + 1) * hd]);
        }
        if let Some(w) = weights.as_deref_mut() {
            w.push(Tensor::from_vec([nq, nk], scores).expect("score shape"));
        }
    }
    out
}

fn check_rows<S: Scalar>(x: &Tensor<S>, d: usize, what: &str) -> Result<usize> {
    if x.rank() != 2 || x.shape()[1] != d {
        return Err(shape_err!("{what} must be [N, {d}], got {:?}", x.shape()));
    }
    Ok(x.shape()[0])
}

/// Multi-head attention from `q_src` rows to `kv_src` rows, with input and
/// output projections and no mask.
pub fn multi_head_attention<S: Scalar>(
    q_src: &Tensor<S>,
    kv_src: &Tensor<S>,
    p: &AttentionParams<S>,
) -> Result<Tensor<S>> {
    mha_inner(q_src, kv_src, p, None)
}

/// Same as [`multi_head_attention`], also returning each head's `[Nq, Nk]`
/// attention weights.
pub fn multi_head_attention_with_weights<S: Scalar>(
    q_src: &Tensor<S>,
    kv_src: &Tensor<S>,
    p: &AttentionParams<S>,
) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    let mut w = Vec::with_capacity(p.heads);
    let out = mha_inner(q_src, kv_src, p, Some(&mut w))?;
    Ok((out, w))
}

fn mha_inner<S: Scalar>(
    q_src: &Tensor<S>,
    kv_src: &Tensor<S>,
    p: &AttentionParams<S>,
    weights: Option<&mut Vec<Tensor<S>>>,
) -> Result<Tensor<S>> {
    let d = p.dim();
    check_heads(d, p.heads)?;
    let nq = check_rows(q_src, d, "query source")?;
    let nk = check_rows(kv_src, d, "key/value source")?;
    let q = p.q.forward(q_src)?;
    let k = p.k.forward(kv_src)?;
    let v = p.v.forward(kv_src)?;
    let mixed = attend(q.data(), k.data(), v.data(), nq, nk, d, p.heads, weights);
    p.out.forward(&Tensor::from_vec([nq, d], mixed)?)
}
