use std::fmt::Write as _;

use dualformer::analysis::count_params;
use dualformer::attention::PriorScale;
use dualformer::model::{ModelConfig, StagePlan};
use serde_json::json;

use crate::error::CliError;
use crate::output::{csv_string, grouped, triple, Render};

pub struct Description {
    config: ModelConfig,
    plans: Vec<StagePlan>,
    params: u64,
}

fn scale_label(s: &PriorScale) -> String {
    match s {
        PriorScale::Grid(k) => triple(*k),
        PriorScale::Whole => "WHOLE".into(),
    }
}

impl Description {
    pub fn new(config: ModelConfig) -> Result<Self, CliError> {
        let plans = config.plan()?;
        let params = count_params(&config)?.totals.params;
        Ok(Self { config, plans, params })
    }

    fn pyramid(p: &StagePlan) -> String {
        p.pyramid.scales.iter().map(scale_label).collect::<Vec<_>>().join(" ")
    }

    fn priors(p: &StagePlan) -> String {
        p.prior_grids.iter().map(|g| triple(*g)).collect::<Vec<_>>().join(" ")
    }
}

impl Render for Description {
    fn table(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let name = c.preset.map_or("custom".to_string(), |p| p.to_string());
        let [t, h, w, ch] = c.input_extent;
        let _ = writeln!(out, "preset {name}: input ({t},{h},{w},{ch}), {} classes, {} params", c.num_classes, grouped(self.params));
        let _ = writeln!(
            out,
            "{:>5}  {:>12}  {:>12}  {:>5}  {:>5}  {:>6}  {:>10}  {:>7}  {:>7}  {:<24}  {:<24}  {:>5}  {:>8}",
            "stage", "merge", "map", "C", "heads", "blocks", "window", "windows", "M", "pyramid", "prior grids", "S", "M/S"
        );
        for p in &self.plans {
            let m = p.tokens();
            let s = p.priors();
            let _ = writeln!(
                out,
                "{:>5}  {:>12}  {:>12}  {:>5}  {:>5}  {:>6}  {:>10}  {:>7}  {:>7}  {:<24}  {:<24}  {:>5}  {:>8.2}",
                p.index,
                triple(p.merge_extent),
                triple(p.map),
                p.channels,
                p.heads,
                p.blocks,
                triple(p.grid.window_extent()),
                p.grid.window_count(),
                m,
                Self::pyramid(p),
                Self::priors(p),
                s,
                m as f64 / s as f64
            );
        }
        out
    }

    fn json(&self) -> serde_json::Value {
        let stages: Vec<_> = self
            .plans
            .iter()
            .map(|p| {
                json!({
                    "stage": p.index,
                    "input_map": p.input_map,
                    "merge_extent": p.merge_extent,
                    "map": p.map,
                    "in_channels": p.in_channels,
                    "channels": p.channels,
                    "heads": p.heads,
                    "head_dim": p.channels / p.heads,
                    "blocks": p.blocks,
                    "window": p.grid.window_extent(),
                    "windows": p.grid.window_count(),
                    "tokens_per_window": p.grid.tokens_per_window(),
                    "pyramid": p.pyramid.scales.iter().map(scale_label).collect::<Vec<_>>(),
                    "prior_grids": p.prior_grids,
                    "tokens": p.tokens(),
                    "priors": p.priors(),
                })
            })
            .collect();
        json!({
            "preset": self.config.preset,
            "input_extent": self.config.input_extent,
            "num_classes": self.config.num_classes,
            "params": self.params,
            "stages": stages,
        })
    }

    fn csv(&self) -> Result<String, CliError> {
        let header = [
            "stage", "merge", "map", "channels", "heads", "blocks", "window", "windows", "tokens", "pyramid",
            "prior_grids", "priors",
        ];
        let rows = self.plans.iter().map(|p| {
            vec![
                p.index.to_string(),
                triple(p.merge_extent),
                triple(p.map),
                p.channels.to_string(),
                p.heads.to_string(),
                p.blocks.to_string(),
                triple(p.grid.window_extent()),
                p.grid.window_count().to_string(),
                p.tokens().to_string(),
                Self::pyramid(p),
                Self::priors(p),
                p.priors().to_string(),
            ]
        });
        csv_string(&header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_stage_one_and_base_stage_four() {
        let d = Description::new(ModelConfig::tiny()).unwrap();
        let v = d.json();
        assert_eq!(v["stages"][0]["tokens"], 50176);
        assert_eq!(v["stages"][0]["priors"], 456);
        let b = Description::new(ModelConfig::base()).unwrap().json();
        assert_eq!(b["stages"][3]["pyramid"], json!(["WHOLE"]));
        assert_eq!(b["stages"][3]["prior_grids"], json!([[16, 7, 7]]));
        assert!(d.table().contains("WHOLE"));
        assert_eq!(d.csv().unwrap().lines().count(), 5);
    }
}
