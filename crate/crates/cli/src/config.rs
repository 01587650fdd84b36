use std::fs;

use dualformer::model::{ModelConfig, PresetName};

use crate::args::ModelArgs;
use crate::error::{input, CliError};

/// Resolves `--preset`/`--config`, then applies the input and class
/// overrides and validates the result.
pub fn resolve(args: &ModelArgs, default: PresetName) -> Result<ModelConfig, CliError> {
    let mut cfg = match (&args.preset, &args.config) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("config {}: {e}", path.display())))?;
            ModelConfig::from_json(&text).map_err(|e| input(format!("config {}: {e}", path.display())))?
        }
        (Some(name), None) => ModelConfig::preset(PresetName::parse(name)?)?,
        (None, None) => ModelConfig::preset(default)?,
    };
    if let Some(extent) = args.input {
        cfg = cfg.with_input(extent.0);
    }
    if let Some(n) = args.classes {
        cfg = cfg.with_classes(n);
    }
    cfg.validate()?;
    Ok(cfg)
}
