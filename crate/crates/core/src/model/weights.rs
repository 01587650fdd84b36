//! Weight manifests: a `manifest.json` listing named tensors plus one binary
//! container per tensor, all in one directory.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::state::ModelState;
use crate::attention::Parameters;
use crate::error::{Error, Result};
use crate::numerics::io::{self, StoredTensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "dualformer-weights";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Path relative to the manifest directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub tensors: Vec<TensorEntry>,
}

/// A manifest with its tensors loaded, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub config: Option<ModelConfig>,
    pub tensors: Vec<(String, StoredTensor)>,
}

fn file_name(name: &str) -> String {
    format!("{name}.dftk")
}

fn bad(msg: String) -> Error {
    Error::Format(msg)
}

/// Writes every tensor and the manifest into `dir`, creating it if needed.
pub fn write_weight_set(dir: &Path, set: &WeightSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.tensors.len());
    for (name, t) in &set.tensors {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(bad(format!("tensor name {name:?} is not a valid file stem")));
        }
        let file = file_name(name);
        let bytes = match t {
            StoredTensor::F64(t) => io::encode(t),
            StoredTensor::F32(t) => io::encode(t),
        };
        fs::write(dir.join(&file), bytes)?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: t.dtype().name().into(),
            file,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: set.config.clone(),
        tensors: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a manifest directory, checking every container against its entry.
pub fn read_weight_set(dir: &Path) -> Result<WeightSet> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| bad(format!("malformed manifest: {e}")))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(bad(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if Path::new(&e.file).is_absolute() || e.file.contains("..") {
            return Err(bad(format!("{}: file path {:?} escapes the manifest directory", e.name, e.file)));
        }
        let t = io::load(dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() || t.dtype().name() != e.dtype {
            return Err(bad(format!(
                "{}: manifest says {:?} {}, container holds {:?} {}",
                e.name,
                e.shape,
                e.dtype,
                t.shape(),
                t.dtype().name()
            )));
        }
        tensors.push((e.name.clone(), t));
    }
    Ok(WeightSet {
        config: manifest.config,
        tensors,
    })
}

pub fn save_weights(dir: &Path, state: &ModelState) -> Result<()> {
    let mut tensors = Vec::new();
    state.visit("", &mut |name, t| {
        tensors.push((name.to_string(), StoredTensor::F64(t.clone())))
    });
    write_weight_set(
        dir,
        &WeightSet {
            config: Some(state.config.clone()),
            tensors,
        },
    )
}

/// Loads a state for `config`, or for the manifest's own config when `None`.
/// Every parameter must be present with the expected shape.
pub fn load_weights(dir: &Path, config: Option<&ModelConfig>) -> Result<ModelState> {
    let set = read_weight_set(dir)?;
    let config = match (config, set.config.as_ref()) {
        (Some(c), _) | (None, Some(c)) => c.clone(),
        (None, None) => return Err(bad("manifest carries no config and none was given".into())),
    };
    let mut by_name: HashMap<String, StoredTensor> = set.tensors.into_iter().collect();
    let mut state = ModelState::<f64>::zeros(&config)?;
    let mut failure = None;
    state.visit_mut("", &mut |name, slot| {
        if failure.is_some() {
            return;
        }
        match by_name.remove(name) {
            None => failure = Some(bad(format!("missing tensor {name}"))),
            Some(t) if t.shape() != slot.shape() => {
                failure = Some(bad(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    t.shape()
                )))
            }
            Some(t) => *slot = t.to_f64(),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_random, parameter_checksum};

    #[test]
    fn state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::micro();
        let state = init_random(&cfg, 5).unwrap();
        save_weights(dir.path(), &state).unwrap();
        let back = load_weights(dir.path(), None).unwrap();
        assert_eq!(parameter_checksum(&back), parameter_checksum(&state));
        assert_eq!(back, state);
    }

    #[test]
    fn shape_mismatch_and_missing_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let state = init_random(&ModelConfig::micro(), 5).unwrap();
        save_weights(dir.path(), &state).unwrap();
        let other = ModelConfig::micro().with_classes(3);
        assert!(matches!(load_weights(dir.path(), Some(&other)), Err(Error::Format(_))));
        fs::remove_file(dir.path().join("head.bias.dftk")).unwrap();
        assert!(load_weights(dir.path(), None).is_err());
    }

    #[test]
    fn malformed_manifest_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"format\": 3}").unwrap();
        assert!(matches!(read_weight_set(dir.path()), Err(Error::Format(_))));
    }
}
