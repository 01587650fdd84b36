use std::fmt::Write as _;
use std::path::Path;

use dualformer::model::{forward_traced, init_random, load_weights, synthetic_clip, ForwardOutput, ModelConfig};
use dualformer::numerics::io;
use dualformer::trace::Probe;
use serde_json::json;

use crate::error::{input, CliError};
use crate::output::{csv_string, Render};

pub struct ForwardSummary {
    seed: u64,
    out: ForwardOutput,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    checksum: u64,
}

pub struct ForwardRequest<'a> {
    pub config: &'a ModelConfig,
    pub seed: u64,
    pub weights: Option<&'a Path>,
    pub logits_path: Option<&'a Path>,
    pub inject_nan: bool,
}

pub fn run(req: &ForwardRequest) -> Result<ForwardSummary, CliError> {
    let state = match req.weights {
        Some(dir) => load_weights(dir, Some(req.config)).map_err(|e| input(format!("weights {}: {e}", dir.display())))?,
        None => init_random(req.config, req.seed)?,
    };
    let mut clip = synthetic_clip(req.config.input_extent, req.seed);
    if req.inject_nan {
        clip.data_mut()[0] = f64::NAN;
    }
    let out = forward_traced(&clip, &state, &Probe::off())?;
    if let Some(path) = req.logits_path {
        io::save(path, &out.logits.values).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    let z = out.logits.values.data();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ForwardSummary {
        seed: req.seed,
        mean,
        std,
        min: z.iter().copied().fold(f64::INFINITY, f64::min),
        max: z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        checksum: out.logits.values.checksum(),
        out,
    })
}

impl Render for ForwardSummary {
    fn table(&self) -> String {
        let mut s = String::new();
        for (i, [t, h, w, c]) in self.out.stage_shapes.iter().enumerate() {
            let _ = writeln!(s, "stage {}: ({t},{h},{w}) x {c}", i + 1);
        }
        let _ = writeln!(s, "logits: {}", self.out.logits.values.numel());
        let _ = writeln!(
            s,
            "mean {:.6e}  std {:.6e}  min {:.6e}  max {:.6e}",
            self.mean, self.std, self.min, self.max
        );
        let _ = writeln!(s, "checksum {:016x}", self.checksum);
        s
    }

    fn json(&self) -> serde_json::Value {
        json!({
            "seed": self.seed,
            "stage_shapes": self.out.stage_shapes,
            "logits": self.out.logits.values.data(),
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "checksum": format!("{:016x}", self.checksum),
        })
    }

    fn csv(&self) -> Result<String, CliError> {
        let rows = self.out.logits.values.data().iter().enumerate().map(|(i, v)| vec![i.to_string(), format!("{v:e}")]);
        csv_string(&["class", "logit"], rows)
    }
}
