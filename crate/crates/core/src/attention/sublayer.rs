//! LW-MSA and GP-MSA sub-layers.
//!
//! Both follow the same pre-LN layout:
//! `x′ = x + Attn(LN₁(x))`, `y = x′ + MLP(LN₂(x′))`.
//! Windows (LW) and query blocks (GP) run in parallel; each unit is computed
//! exactly as it would be sequentially, so results do not depend on the
//! thread count.

use rayon::prelude::*;

use super::mha::attend;
use super::params::AttentionParams;
use super::pyramid::{pyramid_downsample_traced, PyramidKernels, PyramidSpec};
use super::window::{gather_rows, scatter_rows, WindowGrid};
use crate::error::{shape_err, Result};
use crate::numerics::{gelu, map_extent, Scalar, Tensor};
use crate::trace::{CostKind, Probe};

/// Query rows per parallel GP work unit.
const QUERY_BLOCK: usize = 256;

fn project<S: Scalar>(
    x: &Tensor<S>,
    lin: &super::params::Linear<S>,
    probe: &Probe,
    name: &str,
    kind: CostKind,
) -> Result<Tensor<S>> {
    let y = lin.forward(x)?;
    probe.record(name, kind, (x.rows() * lin.d_in() * lin.d_out()) as u64);
    Ok(y)
}

/// Window-restricted multi-head attention (projections included, no LN or
/// residual). `h` is a `[T′, H′, W′, D]` map; the result has the same shape.
pub fn lw_attention<S: Scalar>(
    h: &Tensor<S>,
    grid: &WindowGrid,
    p: &AttentionParams<S>,
    probe: &Probe,
) -> Result<Tensor<S>> {
    p.validate()?;
    let (map, d) = map_extent(h)?;
    if map != grid.map_extent() || d != p.dim() {
        return Err(shape_err!(
            "LW attention on {:?} with grid {:?} and width {}",
            h.shape(),
            grid.map_extent(),
            p.dim()
        ));
    }
    let q = project(h, &p.q, probe, "q", CostKind::Projection)?;
    let k = project(h, &p.k, probe, "k", CostKind::Projection)?;
    let v = project(h, &p.v, probe, "v", CostKind::Projection)?;
    let order = grid.gather_order();
    let n = grid.tokens_per_window();
    let per_window: Vec<Vec<S>> = (0..grid.window_count())
        .into_par_iter()
        .map(|w| {
            let idx = &order[w * n..(w + 1) * n];
            let (qw, kw, vw) = (
                gather_rows(q.data(), d, idx),
                gather_rows(k.data(), d, idx),
                gather_rows(v.data(), d, idx),
            );
            let out = attend(&qw, &kw, &vw, n, n, d, p.heads, None);
            probe.record("qk", CostKind::Attention, (n * n * d) as u64);
            probe.record("av", CostKind::Attention, (n * n * d) as u64);
            out
        })
        .collect();
    let partitioned: Vec<S> = per_window.concat();
    let mixed = Tensor::from_vec(h.shape().to_vec(), scatter_rows(&partitioned, d, &order))?;
    project(&mixed, &p.out, probe, "out", CostKind::Projection)
}

/// Cross-attention from every token of `h` to the given prior rows.
pub fn gp_attention_with_priors<S: Scalar>(
    h: &Tensor<S>,
    priors: &Tensor<S>,
    p: &AttentionParams<S>,
    probe: &Probe,
) -> Result<Tensor<S>> {
    p.validate()?;
    let d = p.dim();
    if h.last_dim() != d || priors.rank() != 2 || priors.shape()[1] != d {
        return Err(shape_err!(
            "GP attention on {:?} against priors {:?} with width {d}",
            h.shape(),
            priors.shape()
        ));
    }
    let m = h.rows();
    let s = priors.shape()[0];
    let q = project(h, &p.q, probe, "q", CostKind::Projection)?;
    let k = project(priors, &p.k, probe, "k", CostKind::Projection)?;
    let v = project(priors, &p.v, probe, "v", CostKind::Projection)?;
    let blocks: Vec<Vec<S>> = q
        .data()
        .par_chunks(QUERY_BLOCK * d)
        .map(|qb| {
            let nq = qb.len() / d;
            let out = attend(qb, k.data(), v.data(), nq, s, d, p.heads, None);
            probe.record("qk", CostKind::Attention, (nq * s * d) as u64);
            probe.record("av", CostKind::Attention, (nq * s * d) as u64);
            out
        })
        .collect();
    debug_assert_eq!(blocks.iter().map(Vec::len).sum::<usize>(), m * d);
    let mixed = Tensor::from_vec(h.shape().to_vec(), blocks.concat())?;
    project(&mixed, &p.out, probe, "out", CostKind::Projection)
}

/// Pyramid downsampling of `h` followed by cross-attention of every token
/// to the resulting priors.
pub fn gp_attention<S: Scalar>(
    h: &Tensor<S>,
    spec: &PyramidSpec,
    kernels: &PyramidKernels<S>,
    p: &AttentionParams<S>,
    probe: &Probe,
) -> Result<Tensor<S>> {
    let priors = pyramid_downsample_traced(h, spec, kernels, probe)?;
    gp_attention_with_priors(h, &priors.tokens, p, probe)
}

/// `x + MLP(LN₂(x))`.
pub fn mlp_residual<S: Scalar>(x: &Tensor<S>, p: &AttentionParams<S>, probe: &Probe) -> Result<Tensor<S>> {
    let h = p.ln2.forward(x)?;
    let hidden = gelu(&project(&h, &p.mlp_in, probe, "mlp_in", CostKind::Mlp)?);
    let out = project(&hidden, &p.mlp_out, probe, "mlp_out", CostKind::Mlp)?;
    x.add(&out)
}

pub fn lw_msa_sublayer<S: Scalar>(
    x: &Tensor<S>,
    grid: &WindowGrid,
    p: &AttentionParams<S>,
) -> Result<Tensor<S>> {
    lw_msa_sublayer_traced(x, grid, p, &Probe::off())
}

pub fn lw_msa_sublayer_traced<S: Scalar>(
    x: &Tensor<S>,
    grid: &WindowGrid,
    p: &AttentionParams<S>,
    probe: &Probe,
) -> Result<Tensor<S>> {
    let attn = lw_attention(&p.ln1.forward(x)?, grid, p, probe)?;
    mlp_residual(&x.add(&attn)?, p, probe)
}

pub fn gp_msa_sublayer<S: Scalar>(
    x: &Tensor<S>,
    spec: &PyramidSpec,
    kernels: &PyramidKernels<S>,
    p: &AttentionParams<S>,
) -> Result<Tensor<S>> {
    gp_msa_sublayer_traced(x, spec, kernels, p, &Probe::off())
}

/// Priors are pooled from the normalized input, the same tensor that feeds
/// the query projection.
pub fn gp_msa_sublayer_traced<S: Scalar>(
    x: &Tensor<S>,
    spec: &PyramidSpec,
    kernels: &PyramidKernels<S>,
    p: &AttentionParams<S>,
    probe: &Probe,
) -> Result<Tensor<S>> {
    let attn = gp_attention(&p.ln1.forward(x)?, spec, kernels, p, probe)?;
    mlp_residual(&x.add(&attn)?, p, probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::params::Linear;
    use crate::trace::Tally;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        let mut p = AttentionParams::zeros(d, heads).unwrap();
        let lin = |din, dout, rng: &mut ChaCha8Rng| Linear {
            weight: Tensor::uniform([din, dout], -0.4, 0.4, rng),
            bias: Tensor::uniform([dout], -0.1, 0.1, rng),
        };
        p.q = lin(d, d, rng);
        p.k = lin(d, d, rng);
        p.v = lin(d, d, rng);
        p.out = lin(d, d, rng);
        p.mlp_in = lin(d, 4 * d, rng);
        p.mlp_out = lin(4 * d, d, rng);
        p.ln1.gain = Tensor::uniform([d], 0.5, 1.5, rng);
        p.ln2.shift = Tensor::uniform([d], -0.2, 0.2, rng);
        p
    }

    #[test]
    fn zero_output_layers_make_lw_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor = Tensor::uniform([4, 4, 4, 8], -1.0, 1.0, &mut rng);
        let mut p = random_params(8, 2, &mut rng);
        p.out = Linear::zeros(8, 8);
        p.mlp_out = Linear::zeros(32, 8);
        let grid = WindowGrid::new([4, 4, 4], [2, 2, 2]).unwrap();
        assert_eq!(lw_msa_sublayer(&x, &grid, &p).unwrap(), x);
    }

    #[test]
    fn zero_output_layers_make_gp_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Tensor = Tensor::uniform([4, 4, 4, 8], -1.0, 1.0, &mut rng);
        let mut p = random_params(8, 2, &mut rng);
        p.out = Linear::zeros(8, 8);
        p.mlp_out = Linear::zeros(32, 8);
        let spec = PyramidSpec::grids(&[[1, 1, 1], [2, 2, 2]]);
        let k = PyramidKernels::averaging(&spec, [4, 4, 4], 8).unwrap();
        assert_eq!(gp_msa_sublayer(&x, &spec, &k, &p).unwrap(), x);
    }

    #[test]
    fn lw_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor = Tensor::uniform([4, 4, 4, 8], -1.0, 1.0, &mut rng);
        let p = random_params(8, 2, &mut rng);
        let grid = WindowGrid::new([4, 4, 4], [2, 2, 2]).unwrap();
        let mut x2 = x.clone();
        // token (3, 1, 2) lives in window (1, 0, 1)
        for c in 0..8 {
            x2.set(&[3, 1, 2, c], 5.0);
        }
        let a = lw_msa_sublayer(&x, &grid, &p).unwrap();
        let b = lw_msa_sublayer(&x2, &grid, &p).unwrap();
        let touched = grid.window_of((3 * 4 + 1) * 4 + 2);
        let mut changed = 0;
        for tok in 0..64 {
            let same = a.data()[tok * 8..(tok + 1) * 8] == b.data()[tok * 8..(tok + 1) * 8];
            if grid.window_of(tok) == touched {
                changed += usize::from(!same);
            } else {
                assert!(same, "token {tok} outside the window changed");
            }
        }
        assert_eq!(changed, 8);
    }

    #[test]
    fn single_prior_gives_constant_attention_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Tensor = Tensor::uniform([2, 4, 4, 8], -1.0, 1.0, &mut rng);
        let p = random_params(8, 2, &mut rng);
        let spec = PyramidSpec::grids(&[[1, 1, 1]]);
        let k = PyramidKernels::averaging(&spec, [2, 4, 4], 8).unwrap();
        let h = p.ln1.forward(&x).unwrap();
        let attn = gp_attention(&h, &spec, &k, &p, &Probe::off()).unwrap();
        let first = &attn.data()[..8];
        for row in attn.data().chunks(8) {
            for (a, b) in row.iter().zip(first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // Same statement at the sub-layer level with the MLP removed.
        let mut p0 = p.clone();
        p0.mlp_out = Linear::zeros(32, 8);
        let y = gp_msa_sublayer(&x, &spec, &k, &p0).unwrap();
        let delta = y.sub(&x).unwrap();
        for row in delta.data().chunks(8) {
            for (a, b) in row.iter().zip(&delta.data()[..8]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gp_query_rows_are_independent_given_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h: Tensor = Tensor::uniform([2, 4, 4, 8], -1.0, 1.0, &mut rng);
        let priors: Tensor = Tensor::uniform([9, 8], -1.0, 1.0, &mut rng);
        let p = random_params(8, 4, &mut rng);
        let a = gp_attention_with_priors(&h, &priors, &p, &Probe::off()).unwrap();
        let mut h2 = h.clone();
        for c in 0..8 {
            h2.set(&[1, 2, 3, c], -3.0);
        }
        let b = gp_attention_with_priors(&h2, &priors, &p, &Probe::off()).unwrap();
        let j = (4 + 2) * 4 + 3;
        for tok in 0..32 {
            let same = a.data()[tok * 8..(tok + 1) * 8] == b.data()[tok * 8..(tok + 1) * 8];
            assert_eq!(same, tok != j);
        }
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Tensor = Tensor::uniform([4, 8, 8, 8], -1.0, 1.0, &mut rng);
        let p = random_params(8, 2, &mut rng);
        let grid = WindowGrid::new([4, 8, 8], [2, 2, 2]).unwrap();
        let spec = PyramidSpec::grids(&[[2, 2, 2]]);
        let k = PyramidKernels::averaging(&spec, [4, 8, 8], 8).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let y = lw_msa_sublayer(&x, &grid, &p).unwrap();
                    gp_msa_sublayer(&y, &spec, &k, &p).unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn traced_counts_match_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Tensor = Tensor::uniform([4, 4, 4, 8], -1.0, 1.0, &mut rng);
        let p = random_params(8, 2, &mut rng);
        let grid = WindowGrid::new([4, 4, 4], [2, 2, 2]).unwrap();
        let tally = Tally::new();
        lw_msa_sublayer_traced(&x, &grid, &p, &Probe::new(&tally).scope("lw")).unwrap();
        let e = tally.into_entries();
        assert_eq!(e["lw.qk"].1, 8 * 64 * 8);
        assert_eq!(e["lw.q"].1, 64 * 64);
        assert_eq!(e["lw.mlp_in"].1, 64 * 8 * 32);
    }
}
