//! Presets, parameter state, the four-stage forward pass, kernel inflation
//! and weight manifests.

mod config;
mod forward;
mod inflate;
mod state;
pub mod weights;

pub use config::{ModelConfig, PresetName, StageConfig, StagePlan, HEAD_DIM};
pub use forward::{
    dualformer_block, forward, forward_traced, patch_embed, patch_merge, synthetic_clip,
    ForwardOutput, Logits,
};
pub use inflate::{inflate_2d, inflate_depthwise};
pub use state::{
    init_random, parameter_checksum, BlockParams, DenseConv, ModelState, StageState, INIT_STD,
};
pub use weights::{load_weights, save_weights};
