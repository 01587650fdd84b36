use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::CostKind;

pub const MAC_UNIT: &str = "MAC (one multiply-accumulate)";
pub const PARAM_UNIT: &str = "parameters";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTerm {
    pub label: String,
    pub kind: CostKind,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub macs: u64,
    pub params: u64,
    /// Softmax, normalization, activation, residual and pooling element
    /// operations; never part of `macs`.
    pub elementwise: u64,
}

/// Formula values for one stage, per attention layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticStage {
    pub stage: usize,
    pub map: [usize; 3],
    pub window: [usize; 3],
    /// `M`.
    pub tokens: usize,
    /// `S`.
    pub priors: usize,
    /// `N_g`.
    pub scales: usize,
    pub channels: usize,
    pub blocks: usize,
    pub lw: u64,
    pub gp_unfactorized: u64,
    pub gp_factorized: u64,
    /// `S·M·D` plus the pooling cost the implementation really pays.
    pub gp_exact: u64,
    pub full: u64,
}

impl AnalyticStage {
    /// `blocks · (lw + gp_factorized)`.
    pub fn dual_subtotal(&self) -> u64 {
        self.blocks as u64 * (self.lw + self.gp_factorized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub stage: usize,
    pub full: u64,
    pub dual: u64,
    /// `full / (lw + gp_factorized)`.
    pub reduction: f64,
    /// `full / (S·M·D)`, equal to `M / S`.
    pub gp_reduction: f64,
    /// Set when the dual-level layer is no cheaper than full attention.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub unit: String,
    pub terms: Vec<CostTerm>,
    pub totals: Totals,
    /// Fraction of the total per kind: MACs, or parameters in a parameter
    /// report.
    pub shares: IndexMap<CostKind, f64>,
    pub analytic: Vec<AnalyticStage>,
    pub comparisons: Vec<Comparison>,
}

impl CostReport {
    pub(crate) fn assemble(
        unit: &str,
        terms: Vec<CostTerm>,
        elementwise: u64,
        analytic: Vec<AnalyticStage>,
    ) -> Self {
        let by_params = unit == PARAM_UNIT;
        let totals = Totals {
            macs: terms.iter().map(|t| t.macs).sum(),
            params: terms.iter().map(|t| t.params).sum(),
            elementwise,
        };
        let denom = if by_params { totals.params } else { totals.macs };
        let mut shares = IndexMap::new();
        if denom > 0 {
            for kind in CostKind::ALL {
                let part: u64 = terms
                    .iter()
                    .filter(|t| t.kind == kind)
                    .map(|t| if by_params { t.params } else { t.macs })
                    .sum();
                if part > 0 {
                    shares.insert(kind, part as f64 / denom as f64);
                }
            }
        }
        let comparisons = analytic.iter().map(compare_stage).collect();
        Self {
            unit: unit.into(),
            terms,
            totals,
            shares,
            analytic,
            comparisons,
        }
    }

    pub fn share(&self, kind: CostKind) -> f64 {
        self.shares.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn term(&self, label: &str) -> Option<&CostTerm> {
        self.terms.iter().find(|t| t.label == label)
    }

    /// MACs of every attention-side term (projections, score/value products,
    /// pooling convs) inside the blocks of `stage`; MLPs excluded.
    pub fn stage_attention_macs(&self, stage: usize) -> u64 {
        let prefix = format!("stage{stage}.block");
        self.terms
            .iter()
            .filter(|t| t.label.starts_with(&prefix))
            .filter(|t| matches!(t.kind, CostKind::Attention | CostKind::Projection | CostKind::Conv))
            .map(|t| t.macs)
            .sum()
    }

    /// MACs of all terms whose label starts with `stage{stage}.` (plus the
    /// patch embedding for stage 1).
    pub fn stage_macs(&self, stage: usize) -> u64 {
        let prefix = format!("stage{stage}.");
        self.terms
            .iter()
            .filter(|t| t.label.starts_with(&prefix) || (stage == 1 && t.label == "patch_embed"))
            .map(|t| t.macs)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The terms list as CSV with a header row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "kind", "macs", "params"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for t in &self.terms {
            w.write_record([t.label.as_str(), t.kind.name(), &t.macs.to_string(), &t.params.to_string()])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.terms.iter().map(|t| t.label.len()).max().unwrap_or(5).max(5);
        if !self.terms.is_empty() {
            let _ = writeln!(out, "{:<width$}  {:<10}  {:>16}  {:>12}", "label", "kind", "macs", "params");
            for t in &self.terms {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<10}  {:>16}  {:>12}",
                    t.label,
                    t.kind.name(),
                    group(t.macs),
                    group(t.params)
                );
            }
            let _ = writeln!(
                out,
                "{:<width$}  {:<10}  {:>16}  {:>12}",
                "total",
                "",
                group(self.totals.macs),
                group(self.totals.params)
            );
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "unit: {}", self.unit);
        if self.totals.macs > 0 {
            let _ = writeln!(out, "total MACs: {} ({:.2} G)", group(self.totals.macs), self.totals.macs as f64 / 1e9);
            let _ = writeln!(out, "elementwise ops (not in MACs): {}", group(self.totals.elementwise));
        }
        if self.totals.params > 0 {
            let _ = writeln!(out, "total params: {} ({:.2} M)", group(self.totals.params), self.totals.params as f64 / 1e6);
        }
        if !self.shares.is_empty() {
            let shares: Vec<String> = self
                .shares
                .iter()
                .map(|(k, v)| format!("{} {:.1}%", k.name(), v * 100.0))
                .collect();
            let _ = writeln!(out, "shares: {}", shares.join(", "));
        }
        if !self.analytic.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:>5}  {:>14}  {:>7}  {:>5}  {:>16}  {:>16}  {:>16}  {:>16}  {:>18}",
                "stage", "map", "M", "S", "lw", "gp_unfactorized", "gp_factorized", "gp_exact", "full"
            );
            for a in &self.analytic {
                let _ = writeln!(
                    out,
                    "{:>5}  {:>14}  {:>7}  {:>5}  {:>16}  {:>16}  {:>16}  {:>16}  {:>18}",
                    a.stage,
                    format!("{}x{}x{}", a.map[0], a.map[1], a.map[2]),
                    a.tokens,
                    a.priors,
                    group(a.lw),
                    group(a.gp_unfactorized),
                    group(a.gp_factorized),
                    group(a.gp_exact),
                    group(a.full)
                );
            }
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:>5}  {:>18}  {:>16}  {:>10}  {:>10}", "stage", "full", "lw+gp", "full/dual", "M/S");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{:>5}  {:>18}  {:>16}  {:>10.3}  {:>10.3}{}",
                    c.stage,
                    group(c.full),
                    group(c.dual),
                    c.reduction,
                    c.gp_reduction,
                    if c.flagged { "  <= 1, no saving" } else { "" }
                );
            }
        }
        out
    }
}

fn compare_stage(a: &AnalyticStage) -> Comparison {
    let dual = a.lw + a.gp_factorized;
    let smd = (a.priors * a.tokens * a.channels) as f64;
    let reduction = a.full as f64 / dual as f64;
    Comparison {
        stage: a.stage,
        full: a.full,
        dual,
        reduction,
        gp_reduction: a.full as f64 / smd,
        flagged: reduction <= 1.0,
    }
}

/// `1234567` to `1,234,567`.
fn group(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
