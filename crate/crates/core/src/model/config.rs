use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{PyramidSpec, WindowGrid};
use crate::error::{config_err, Error, Result};

/// Channels per attention head in the compiled-in presets.
pub const HEAD_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Tiny,
    Small,
    Base,
    Micro,
    Custom,
}

impl PresetName {
    /// Names accepted on the command line.
    pub const BUILTIN: [&'static str; 4] = ["tiny", "small", "base", "micro"];

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Self::Tiny),
            "small" => Ok(Self::Small),
            "base" => Ok(Self::Base),
            "micro" => Ok(Self::Micro),
            _ => Err(config_err!(
                "unknown preset {name:?}; valid presets: {}",
                Self::BUILTIN.join(", ")
            )),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Tiny => "tiny",
            Self::Small => "small",
            Self::Base => "base",
            Self::Micro => "micro",
            Self::Custom => "custom",
        };
        f.write_str(s)
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Patch-embedding (stage 1) or patch-merging extent, `(time, height, width)`.
    pub merge_extent: [usize; 3],
    pub channels: usize,
    pub blocks: usize,
    pub window: [usize; 3],
    pub pyramid: PyramidSpec,
    pub heads: usize,
    /// Extra temporal downsampling applied by this stage's merge.
    #[serde(default = "one")]
    pub temporal_pool_rate: usize,
}

impl StageConfig {
    /// Merge extent with the temporal pooling rate folded in.
    pub fn effective_merge(&self) -> [usize; 3] {
        [
            self.merge_extent[0] * self.temporal_pool_rate,
            self.merge_extent[1],
            self.merge_extent[2],
        ]
    }
}

fn default_eps() -> f64 {
    crate::numerics::LN_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetName>,
    /// `(T, H, W, C_in)`.
    pub input_extent: [usize; 4],
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

/// A stage with every derived quantity resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    /// 1-based.
    pub index: usize,
    pub in_channels: usize,
    pub channels: usize,
    pub merge_extent: [usize; 3],
    pub input_map: [usize; 3],
    pub map: [usize; 3],
    pub grid: WindowGrid,
    pub pyramid: PyramidSpec,
    pub prior_grids: Vec<[usize; 3]>,
    pub heads: usize,
    pub blocks: usize,
}

impl StagePlan {
    /// `M = T′·H′·W′`.
    pub fn tokens(&self) -> usize {
        self.map.iter().product()
    }

    /// `S`, total prior tokens.
    pub fn priors(&self) -> usize {
        self.prior_grids.iter().map(|k| k.iter().product::<usize>()).sum()
    }

    /// Stage 1 embeds patches; later stages merge them.
    pub fn merge_name(&self) -> String {
        if self.index == 1 {
            "patch_embed".into()
        } else {
            format!("stage{}.merge", self.index)
        }
    }
}

fn preset_stages(channels: [usize; 4], blocks: [usize; 4]) -> Vec<StageConfig> {
    let merges = [[2, 4, 4], [1, 2, 2], [1, 2, 2], [1, 2, 2]];
    let two_scale = PyramidSpec::grids(&[[4, 4, 4], [8, 7, 7]]);
    let pyramids = [
        two_scale.clone(),
        two_scale,
        PyramidSpec::grids(&[[8, 7, 7]]),
        PyramidSpec::whole(),
    ];
    (0..4)
        .map(|i| StageConfig {
            merge_extent: merges[i],
            channels: channels[i],
            blocks: blocks[i],
            window: [8, 7, 7],
            pyramid: pyramids[i].clone(),
            heads: channels[i] / HEAD_DIM,
            temporal_pool_rate: 1,
        })
        .collect()
}

impl ModelConfig {
    pub fn preset(name: PresetName) -> Result<Self> {
        let stages = match name {
            PresetName::Tiny => preset_stages([64, 128, 256, 512], [1, 1, 5, 2]),
            PresetName::Small => preset_stages([96, 192, 384, 768], [1, 1, 9, 1]),
            PresetName::Base => preset_stages([128, 256, 512, 1024], [1, 1, 9, 1]),
            PresetName::Micro => return Ok(Self::micro()),
            PresetName::Custom => return Err(config_err!("\"custom\" is not a compiled-in preset")),
        };
        Ok(Self {
            preset: Some(name),
            input_extent: [32, 224, 224, 3],
            stages,
            num_classes: 400,
            ln_eps: default_eps(),
        })
    }

    pub fn tiny() -> Self {
        Self::preset(PresetName::Tiny).unwrap()
    }

    pub fn small() -> Self {
        Self::preset(PresetName::Small).unwrap()
    }

    pub fn base() -> Self {
        Self::preset(PresetName::Base).unwrap()
    }

    /// Desk-scale fixture: one block per stage, `C = (8, 16, 32, 64)`,
    /// input `(4, 16, 16, 3)`. Stage 1 uses `(2, 2, 2)` patches so the four
    /// stages still reach a `(2, 1, 1)` map.
    pub fn micro() -> Self {
        let stage = |merge, channels, window, pyramid: PyramidSpec, heads| StageConfig {
            merge_extent: merge,
            channels,
            blocks: 1,
            window,
            pyramid,
            heads,
            temporal_pool_rate: 1,
        };
        Self {
            preset: Some(PresetName::Micro),
            input_extent: [4, 16, 16, 3],
            stages: vec![
                stage([2, 2, 2], 8, [1, 4, 4], PyramidSpec::grids(&[[1, 2, 2], [2, 4, 4]]), 2),
                stage([1, 2, 2], 16, [2, 2, 2], PyramidSpec::grids(&[[1, 1, 1], [2, 2, 2]]), 2),
                stage([1, 2, 2], 32, [1, 2, 2], PyramidSpec::grids(&[[1, 1, 1]]), 4),
                stage([1, 2, 2], 64, [2, 1, 1], PyramidSpec::whole(), 4),
            ],
            num_classes: 10,
            ln_eps: default_eps(),
        }
    }

    pub fn with_input(mut self, extent: [usize; 3]) -> Self {
        self.input_extent[..3].copy_from_slice(&extent);
        self
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    /// Validates the config and resolves every stage.
    pub fn plan(&self) -> Result<Vec<StagePlan>> {
        if self.stages.is_empty() {
            return Err(config_err!("model needs at least one stage"));
        }
        if self.num_classes == 0 {
            return Err(config_err!("num_classes must be >= 1"));
        }
        if self.input_extent.contains(&0) {
            return Err(config_err!("input extent {:?} has a zero axis", self.input_extent));
        }
        if !(self.ln_eps > 0.0) {
            return Err(config_err!("ln_eps must be positive"));
        }
        let mut map = [self.input_extent[0], self.input_extent[1], self.input_extent[2]];
        let mut in_channels = self.input_extent[3];
        let mut plans = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            let index = i + 1;
            let ctx = |e: Error| config_err!("stage {index}: {}", e.to_string().trim_start_matches("shape error: "));
            if st.channels == 0 || st.blocks == 0 || st.temporal_pool_rate == 0 {
                return Err(config_err!(
                    "stage {index}: channels, blocks and temporal_pool_rate must be >= 1"
                ));
            }
            if st.heads == 0 || st.channels % st.heads != 0 {
                return Err(config_err!(
                    "stage {index}: {} channels not divisible by {} heads",
                    st.channels,
                    st.heads
                ));
            }
            let merge = st.effective_merge();
            if merge.contains(&0) {
                return Err(config_err!("stage {index}: merge extent {merge:?} has a zero axis"));
            }
            for axis in 0..3 {
                if map[axis] % merge[axis] != 0 {
                    return Err(config_err!(
                        "stage {index}: merge extent {merge:?} does not divide map {map:?}"
                    ));
                }
            }
            let input_map = map;
            map = [0, 1, 2].map(|a| map[a] / merge[a]);
            let grid = WindowGrid::new(map, st.window).map_err(ctx)?;
            let prior_grids = st.pyramid.resolve(map).map_err(ctx)?;
            plans.push(StagePlan {
                index,
                in_channels,
                channels: st.channels,
                merge_extent: merge,
                input_map,
                map,
                grid,
                pyramid: st.pyramid.clone(),
                prior_grids,
                heads: st.heads,
                blocks: st.blocks,
            });
            in_channels = st.channels;
        }
        Ok(plans)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.channels)
    }

    /// Parses a JSON config. A `"base"` key names a preset to start from;
    /// the remaining keys override it, objects and arrays merging element-wise.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(obj) = value.as_object_mut() {
            if let Some(base) = obj.remove("base") {
                let name = base
                    .as_str()
                    .ok_or_else(|| config_err!("\"base\" must be a preset name"))?;
                let mut merged = serde_json::to_value(Self::preset(PresetName::parse(name)?)?)?;
                let overridden = !obj.is_empty() && !obj.contains_key("preset");
                merge_json(&mut merged, serde_json::Value::Object(obj.clone()));
                if overridden {
                    merged["preset"] = serde_json::json!("custom");
                }
                value = merged;
            }
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| config_err!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge_json(dst: &mut serde_json::Value, src: serde_json::Value) {
    use serde_json::Value;
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (Value::Array(d), Value::Array(s))
            if d.len() == s.len() && d.iter().all(Value::is_object) =>
        {
            for (slot, v) in d.iter_mut().zip(s) {
                merge_json(slot, v);
            }
        }
        (slot, v) => *slot = v,
    }
}
