use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, StagePlan};
use crate::attention::{
    join, AttentionParams, Linear, Parameters, PegParams, PyramidKernels, PyramidSpec,
};
use crate::error::Result;
use crate::numerics::{ConvKernel3D, Scalar, Tensor};

/// Non-overlapping dense convolution (extent == stride) used for patch
/// embedding and patch merging. `weight` is `[k_t, k_h, k_w, C_in, C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseConv<S = f64> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> DenseConv<S> {
    pub fn zeros(extent: [usize; 3], cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros([extent[0], extent[1], extent[2], cin, cout]),
            bias: Tensor::zeros([cout]),
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[0], s[1], s[2]]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[4]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> DenseConv<U> {
        DenseConv {
            weight: self.weight.map(f),
            bias: self.bias.map(f),
        }
    }
}

impl<S: Scalar> Parameters<S> for DenseConv<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// One block: LW sub-layer, then GP sub-layer with its pyramid kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<S = f64> {
    pub window: [usize; 3],
    pub pyramid_spec: PyramidSpec,
    pub lw: AttentionParams<S>,
    pub gp: AttentionParams<S>,
    pub pyramid: PyramidKernels<S>,
}

impl<S: Scalar> BlockParams<S> {
    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> BlockParams<U> {
        BlockParams {
            window: self.window,
            pyramid_spec: self.pyramid_spec.clone(),
            lw: self.lw.map(f),
            gp: self.gp.map(f),
            pyramid: self.pyramid.map(f),
        }
    }
}

impl<S: Scalar> Parameters<S> for BlockParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.lw.visit(&join(prefix, "lw"), f);
        let gp = join(prefix, "gp");
        self.gp.visit(&gp, f);
        self.pyramid.visit(&gp, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.lw.visit_mut(&join(prefix, "lw"), f);
        let gp = join(prefix, "gp");
        self.gp.visit_mut(&gp, f);
        self.pyramid.visit_mut(&gp, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageState<S = f64> {
    /// 1-based stage index.
    pub index: usize,
    /// Patch embedding for stage 1, patch merging afterwards.
    pub merge: DenseConv<S>,
    pub peg: PegParams<S>,
    pub blocks: Vec<BlockParams<S>>,
}

impl<S: Scalar> StageState<S> {
    pub fn merge_name(&self) -> String {
        if self.index == 1 {
            "patch_embed".into()
        } else {
            format!("stage{}.merge", self.index)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<S = f64> {
    pub config: ModelConfig,
    pub stages: Vec<StageState<S>>,
    pub head: Linear<S>,
}

impl<S: Scalar> Parameters<S> for ModelState<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for st in &self.stages {
            st.merge.visit(&join(prefix, &st.merge_name()), f);
            let sp = join(prefix, &format!("stage{}", st.index));
            st.peg.visit(&join(&sp, "peg"), f);
            for (j, b) in st.blocks.iter().enumerate() {
                b.visit(&join(&sp, &format!("block{j}")), f);
            }
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for st in &mut self.stages {
            let name = st.merge_name();
            st.merge.visit_mut(&join(prefix, &name), f);
            let sp = join(prefix, &format!("stage{}", st.index));
            st.peg.visit_mut(&join(&sp, "peg"), f);
            for (j, b) in st.blocks.iter_mut().enumerate() {
                b.visit_mut(&join(&sp, &format!("block{j}")), f);
            }
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

fn stage_zeros<S: Scalar>(plan: &StagePlan, eps: f64) -> Result<StageState<S>> {
    let c = plan.channels;
    let mut blocks = Vec::with_capacity(plan.blocks);
    for _ in 0..plan.blocks {
        let mut lw = AttentionParams::zeros(c, plan.heads)?;
        let mut gp = AttentionParams::zeros(c, plan.heads)?;
        for ln in [&mut lw.ln1, &mut lw.ln2, &mut gp.ln1, &mut gp.ln2] {
            ln.eps = eps;
        }
        blocks.push(BlockParams {
            window: plan.grid.window_extent(),
            pyramid_spec: plan.pyramid.clone(),
            lw,
            gp,
            pyramid: PyramidKernels::build(&plan.pyramid, plan.map, c, |ch, e| {
                ConvKernel3D::zeros(ch, e, e)
            })?,
        });
    }
    Ok(StageState {
        index: plan.index,
        merge: DenseConv::zeros(plan.merge_extent, plan.in_channels, c),
        peg: PegParams::zeros(c),
        blocks,
    })
}

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

impl<S: Scalar> ModelState<S> {
    /// All weights and biases zero, layer-norm gains one.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let plans = config.plan()?;
        let stages = plans
            .iter()
            .map(|p| stage_zeros(p, config.ln_eps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            stages,
            head: Linear::zeros(config.final_channels(), config.num_classes),
        })
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|st| StageState {
                    index: st.index,
                    merge: st.merge.map(f),
                    peg: st.peg.map(f),
                    blocks: st.blocks.iter().map(|b| b.map(f)).collect(),
                })
                .collect(),
            head: self.head.map(f),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _| out.push(n.to_string()));
        out
    }

    /// Sets every weight on an attention or MLP residual branch output, and
    /// every PEG tensor, to zero.
    pub fn zero_residual_branches(&mut self) {
        for st in &mut self.stages {
            st.peg = PegParams::zeros(st.peg.kernel.channels());
            for b in &mut st.blocks {
                for p in [&mut b.lw, &mut b.gp] {
                    p.out = Linear::zeros(p.out.d_in(), p.out.d_out());
                    p.mlp_out = Linear::zeros(p.mlp_out.d_in(), p.mlp_out.d_out());
                }
            }
        }
    }
}

fn is_peg(name: &str) -> bool {
    name.split('.').nth(1) == Some("peg")
}

/// Reproducible initialization: truncated normal (±2σ, σ = 0.02) for every
/// linear and convolution weight except the PEG, zero biases, unit LN gains.
pub fn init_random(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    let mut state = ModelState::<f64>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    state.visit_mut("", &mut |name, t| {
        if !name.ends_with(".weight") || is_peg(name) {
            return;
        }
        for v in t.data_mut() {
            *v = loop {
                let z: f64 = normal.sample(&mut rng);
                if z.abs() <= 2.0 * INIT_STD {
                    break z;
                }
            };
        }
    });
    Ok(state)
}

/// Order-sensitive checksum over every parameter value.
pub fn parameter_checksum(state: &ModelState) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    state.visit("", &mut |name, t| {
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= t.checksum();
        h = h.wrapping_mul(0x100000001b3);
    });
    h
}
