use rand::Rng;

use super::{divisors, pick, random_attention, rng, CheckOptions, CheckResult, Fault};
use crate::attention::{
    gp_attention, lw_attention, pyramid_downsample, PriorScale,
    PyramidKernels, PyramidSpec, WindowGrid,
};
use crate::error::Result;
use crate::model::{
    dualformer_block, forward, init_random, inflate_2d, patch_embed, patch_merge, synthetic_clip, ModelConfig,
};
use crate::numerics::{conv3d, Tensor};
use crate::oracle::{
    adaptive_avg_pool3d_ref, conv2d_ref, masked_multi_head_ref, AttentionMask,
};

pub const ORACLE_TOLERANCE: f64 = 1e-10;

fn random_map(rng: &mut rand_chacha::ChaCha8Rng, max: usize) -> [usize; 3] {
    [0; 3].map(|_| rng.random_range(1..=max))
}

fn random_width(rng: &mut rand_chacha::ChaCha8Rng) -> (usize, usize) {
    let d = pick(rng, &[2, 4, 6, 8, 12, 16, 24, 32]);
    let heads = pick(rng, &divisors(d).into_iter().filter(|&h| h <= 4).collect::<Vec<_>>());
    (d, heads)
}

/// Window attention against block-diagonal masked full attention, with the
/// same projections applied outside the oracle.
pub fn lw_oracle_suite(opts: &CheckOptions) -> Result<CheckResult> {
    let mut res = CheckResult::new("lw_msa vs masked oracle", ORACLE_TOLERANCE);
    for case in 0..opts.cases {
        let seed = opts.seed.wrapping_add(case as u64);
        let mut r = rng(seed);
        let map = random_map(&mut r, 8);
        let window = map.map(|e| pick(&mut r, &divisors(e)));
        let (d, heads) = random_width(&mut r);
        let grid = WindowGrid::new(map, window)?;
        let p = random_attention(d, heads, &mut r);
        let h: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut r);

        let mut fast = lw_attention(&h, &grid, &p, &crate::trace::Probe::off())?;
        Fault::apply(opts.fault, &mut fast);

        let m = grid.token_count();
        let rows = h.clone().reshape([m, d])?;
        let (q, k, v) = (p.q.forward(&rows)?, p.k.forward(&rows)?, p.v.forward(&rows)?);
        let mixed = masked_multi_head_ref(&q, &k, &v, heads, &AttentionMask::block_diagonal(&grid))?;
        let slow = p.out.forward(&mixed)?.reshape(h.shape().to_vec())?;

        res.observe(fast.max_abs_diff(&slow), seed, || {
            format!("map={map:?} window={window:?} d={d} heads={heads}")
        });
    }
    Ok(res)
}

fn random_spec(r: &mut rand_chacha::ChaCha8Rng, map: [usize; 3]) -> PyramidSpec {
    let n = r.random_range(1..=3);
    PyramidSpec::new(
        (0..n)
            .map(|_| {
                if r.random_bool(0.2) {
                    PriorScale::Whole
                } else {
                    PriorScale::Grid(map.map(|e| pick(r, &divisors(e))))
                }
            })
            .collect(),
    )
}

/// Pyramid downsampling with box-average kernels against adaptive average
/// pooling, and the prior count against the spec.
pub fn gp_pool_suite(opts: &CheckOptions) -> Result<CheckResult> {
    let mut res = CheckResult::new("pyramid pool vs avg-pool oracle", ORACLE_TOLERANCE);
    for case in 0..opts.cases {
        let seed = opts.seed.wrapping_add(case as u64);
        let mut r = rng(seed);
        let map = random_map(&mut r, 8);
        let d = r.random_range(1..=16);
        let spec = random_spec(&mut r, map);
        let x: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut r);
        let kernels = PyramidKernels::averaging(&spec, map, d)?;
        let mut priors = pyramid_downsample(&x, &spec, &kernels)?;
        Fault::apply(opts.fault, &mut priors.tokens);

        let mut err: f64 = if priors.len() == spec.prior_count(map)? { 0.0 } else { f64::INFINITY };
        for (grid, &off) in spec.resolve(map)?.iter().zip(&priors.offsets) {
            let slow = adaptive_avg_pool3d_ref(&x, *grid)?;
            let n = slow.numel();
            let fast = &priors.tokens.data()[off * d..off * d + n];
            for (a, b) in fast.iter().zip(slow.data()) {
                err = err.max((a - b).abs());
            }
        }
        res.observe(err, seed, || format!("map={map:?} d={d} spec={spec}"));
    }
    Ok(res)
}

/// Global attention against cross-attention to oracle-pooled priors.
pub fn gp_attention_suite(opts: &CheckOptions) -> Result<CheckResult> {
    let mut res = CheckResult::new("gp_msa vs pooled cross-attn", ORACLE_TOLERANCE);
    let map = [4, 4, 4];
    let d = 8;
    let spec = PyramidSpec::grids(&[[1, 1, 1], [2, 2, 2]]);
    for case in 0..opts.cases {
        let seed = opts.seed.wrapping_add(case as u64);
        let mut r = rng(seed);
        let heads = pick(&mut r, &[1, 2, 4]);
        let p = random_attention(d, heads, &mut r);
        let h: Tensor = Tensor::uniform([4, 4, 4, d], -1.0, 1.0, &mut r);
        let kernels = PyramidKernels::averaging(&spec, map, d)?;
        let mut fast = gp_attention(&h, &spec, &kernels, &p, &crate::trace::Probe::off())?;
        Fault::apply(opts.fault, &mut fast);

        let mut pooled = Vec::new();
        for grid in spec.resolve(map)? {
            pooled.extend_from_slice(adaptive_avg_pool3d_ref(&h, grid)?.data());
        }
        let s = pooled.len() / d;
        let priors = Tensor::from_vec([s, d], pooled)?;
        let rows = h.clone().reshape([64, d])?;
        let (q, k, v) = (p.q.forward(&rows)?, p.k.forward(&priors)?, p.v.forward(&priors)?);
        let mixed = masked_multi_head_ref(&q, &k, &v, heads, &AttentionMask::all(64, s))?;
        let slow = p.out.forward(&mixed)?.reshape(h.shape().to_vec())?;
        res.observe(fast.max_abs_diff(&slow), seed, || format!("heads={heads}"));
    }
    Ok(res)
}

/// Inflated 2D kernels on temporally constant clips against the per-frame
/// 2D oracle.
pub fn inflation_suite(opts: &CheckOptions) -> Result<CheckResult> {
    let mut res = CheckResult::new("inflated conv vs 2D oracle", ORACLE_TOLERANCE);
    for case in 0..opts.cases {
        let seed = opts.seed.wrapping_add(case as u64);
        let mut r = rng(seed);
        let t = r.random_range(1..=4);
        let (kh, kw) = (r.random_range(1..=4), r.random_range(1..=4));
        let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=5));
        let stride = [r.random_range(1..=kh), r.random_range(1..=kw)];
        let (h, w) = (kh + stride[0] * r.random_range(0..4), kw + stride[1] * r.random_range(0..4));
        let frames = t * r.random_range(1..=2);
        let w2: Tensor = Tensor::uniform([kh, kw, cin, cout], -1.0, 1.0, &mut r);
        let frame: Tensor = Tensor::uniform([h, w, cin], -1.0, 1.0, &mut r);
        let mut clip = Vec::with_capacity(frames * frame.numel());
        for _ in 0..frames {
            clip.extend_from_slice(frame.data());
        }
        let clip = Tensor::from_vec([frames, h, w, cin], clip)?;
        let w3 = inflate_2d(&w2, t)?;
        let mut fast = conv3d(&clip, &w3, None, [t, stride[0], stride[1]], [0; 3])?;
        Fault::apply(opts.fault, &mut fast);
        let slow = conv2d_ref(&frame, &w2, stride)?;
        let per = slow.numel();
        let err = fast
            .data()
            .chunks(per)
            .map(|slice| Tensor::from_vec(slow.shape().to_vec(), slice.to_vec()).map(|s| s.max_abs_diff(&slow)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        res.observe(err, seed, || format!("t={t} kernel={kh}x{kw} stride={stride:?}"));
    }
    Ok(res)
}

/// All oracle equivalence suites.
pub fn oracle_suites(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    Ok(vec![
        lw_oracle_suite(opts)?,
        gp_pool_suite(opts)?,
        gp_attention_suite(opts)?,
        inflation_suite(opts)?,
    ])
}

/// Zeroed residual branches make every block an identity and reduce the
/// network to embed, merges, pooling and head. Errors are 0 (bitwise equal)
/// or 1.
pub fn residual_identity_check(config: &ModelConfig, seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    let mut res = CheckResult::new("residual identity (bitwise)", 0.5);
    let mut state = init_random(config, seed)?;
    state.zero_residual_branches();
    let clip = synthetic_clip(config.input_extent, seed ^ 0x5eed);

    let mut x = clip.clone();
    for st in &state.stages {
        x = if st.index == 1 {
            patch_embed(&x, &st.merge)?
        } else {
            patch_merge(&x, &st.merge)?
        };
        for (j, block) in st.blocks.iter().enumerate() {
            let peg = (j == 0).then_some(&st.peg);
            let mut y = dualformer_block(&x, block, peg)?;
            Fault::apply(fault, &mut y);
            let same = y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            res.observe(if same { 0.0 } else { 1.0 }, seed, || format!("stage{}.block{j}", st.index));
        }
    }
    let c = x.last_dim();
    let mut pooled = vec![0.0; c];
    for row in x.data().chunks(c) {
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let inv = 1.0 / x.rows() as f64;
    let pooled = Tensor::from_vec([1, c], pooled.into_iter().map(|v| v * inv).collect())?;
    let reduced = state.head.forward(&pooled)?;
    let full = forward(&clip, &state)?.values;
    let same = full.data().iter().zip(reduced.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    res.observe(if same { 0.0 } else { 1.0 }, seed, || "logits".into());
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> CheckOptions {
        CheckOptions {
            cases: 12,
            ..CheckOptions::default()
        }
    }

    #[test]
    fn suites_pass_and_fault_fails() {
        for r in oracle_suites(&quick()).unwrap() {
            assert!(r.passed, "{r}");
        }
        let faulty = CheckOptions {
            fault: Some(Fault::PerturbOutput),
            ..quick()
        };
        for r in oracle_suites(&faulty).unwrap() {
            assert!(!r.passed, "{r}");
        }
    }

    #[test]
    fn residual_identity_holds_on_micro() {
        let cfg = ModelConfig::micro();
        assert!(residual_identity_check(&cfg, 3, None).unwrap().passed);
        assert!(!residual_identity_check(&cfg, 3, Some(Fault::PerturbOutput)).unwrap().passed);
    }
}
