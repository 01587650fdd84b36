//! Manifest-to-manifest kernel inflation.
//!
//! Eligible tensors are `*.weight` entries of rank 4 (dense 2D kernels,
//! `[k_h, k_w, C_in, C_out]`) or rank 3 (depth-wise 2D kernels,
//! `[C, k_h, k_w]`). Everything else is copied unchanged.

use std::fmt::Write as _;
use std::path::Path;

use dualformer::model::weights::{read_weight_set, write_weight_set, WeightSet};
use dualformer::model::{inflate_2d, inflate_depthwise};
use dualformer::numerics::io::StoredTensor;
use dualformer::{Scalar, Tensor};
use serde_json::json;

use crate::error::{input, CliError};
use crate::output::{csv_string, Render};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Dense,
    Depthwise,
    Copied,
}

impl Action {
    fn name(self) -> &'static str {
        match self {
            Action::Dense => "inflated (dense)",
            Action::Depthwise => "inflated (depth-wise)",
            Action::Copied => "copied",
        }
    }

    fn of(name: &str, rank: usize) -> Self {
        match (name.ends_with(".weight"), rank) {
            (true, 4) => Action::Dense,
            (true, 3) => Action::Depthwise,
            _ => Action::Copied,
        }
    }
}

pub struct InflateReport {
    t_extent: usize,
    entries: Vec<(String, Action, Vec<usize>, Vec<usize>)>,
}

fn apply<S: Scalar>(t: &Tensor<S>, action: Action, n: usize) -> dualformer::Result<Tensor<S>> {
    match action {
        Action::Dense => inflate_2d(t, n),
        Action::Depthwise => inflate_depthwise(t, n),
        Action::Copied => Ok(t.clone()),
    }
}

pub fn run(input_dir: &Path, output_dir: &Path, t_extent: usize) -> Result<InflateReport, CliError> {
    if t_extent == 0 {
        return Err(input("--t-extent must be >= 1"));
    }
    let set = read_weight_set(input_dir).map_err(|e| input(format!("{}: {e}", input_dir.display())))?;
    let mut entries = Vec::with_capacity(set.tensors.len());
    let mut tensors = Vec::with_capacity(set.tensors.len());
    for (name, t) in set.tensors {
        let action = Action::of(&name, t.shape().len());
        let before = t.shape().to_vec();
        let out = match &t {
            StoredTensor::F64(x) => StoredTensor::F64(apply(x, action, t_extent)?),
            StoredTensor::F32(x) => StoredTensor::F32(apply(x, action, t_extent)?),
        };
        entries.push((name.clone(), action, before, out.shape().to_vec()));
        tensors.push((name, out));
    }
    // A model config no longer describes the tensors once kernels gain a
    // temporal axis of length > 1.
    let config = if t_extent == 1 { set.config } else { None };
    write_weight_set(output_dir, &WeightSet { config, tensors })
        .map_err(|e| input(format!("{}: {e}", output_dir.display())))?;
    Ok(InflateReport { t_extent, entries })
}

impl Render for InflateReport {
    fn table(&self) -> String {
        let mut s = String::new();
        let width = self.entries.iter().map(|e| e.0.len()).max().unwrap_or(4).max(4);
        for (name, action, before, after) in &self.entries {
            let _ = writeln!(s, "{name:<width$}  {:<22}  {before:?} -> {after:?}", action.name());
        }
        let inflated = self.entries.iter().filter(|e| e.1 != Action::Copied).count();
        let _ = writeln!(
            s,
            "{inflated} of {} tensors inflated with t = {}",
            self.entries.len(),
            self.t_extent
        );
        s
    }

    fn json(&self) -> serde_json::Value {
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|(name, action, before, after)| {
                json!({ "name": name, "action": action.name(), "shape_in": before, "shape_out": after })
            })
            .collect();
        json!({ "t_extent": self.t_extent, "tensors": entries })
    }

    fn csv(&self) -> Result<String, CliError> {
        let dims = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let rows = self
            .entries
            .iter()
            .map(|(name, action, before, after)| vec![name.clone(), action.name().into(), dims(before), dims(after)]);
        csv_string(&["name", "action", "shape_in", "shape_out"], rows)
    }
}
