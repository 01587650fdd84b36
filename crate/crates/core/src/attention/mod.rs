//! Local window attention, global pyramid attention and the convolutional
//! position encoding generator.

mod mha;
mod params;
mod peg;
mod pyramid;
mod sublayer;
mod window;

pub use mha::{multi_head_attention, multi_head_attention_with_weights};
pub use params::{AttentionParams, LayerNormParams, Linear, Parameters, MLP_RATIO};
pub(crate) use params::join;
pub use peg::{peg, peg_traced, PegParams, PEG_EXTENT, PEG_PADDING};
pub use pyramid::{
    pyramid_downsample, pyramid_downsample_traced, scale_regions, GlobalPriors, PriorScale,
    PyramidKernels, PyramidSpec, ScaleKernels,
};
pub use sublayer::{
    gp_attention, gp_attention_with_priors, gp_msa_sublayer, gp_msa_sublayer_traced,
    lw_attention, lw_msa_sublayer, lw_msa_sublayer_traced, mlp_residual,
};
pub use window::{window_partition, window_reverse, WindowGrid};
