//! Shape-only parameter and MAC counting, and the instrumented counterpart.

use indexmap::IndexMap;

use super::formulas::{cost_full, cost_gp, cost_lw, pyramid_conv_exact};
use super::report::{AnalyticStage, CostReport, CostTerm, MAC_UNIT, PARAM_UNIT};
use crate::attention::{Parameters, MLP_RATIO, PEG_EXTENT};
use crate::error::Result;
use crate::model::{forward_traced, ModelConfig, ModelState, StagePlan};
use crate::numerics::Tensor;
use crate::trace::{CostKind, Probe, Tally};

struct Walker {
    terms: Vec<CostTerm>,
    elementwise: u64,
}

impl Walker {
    fn push(&mut self, label: String, kind: CostKind, macs: usize, params: usize) {
        self.terms.push(CostTerm {
            label,
            kind,
            macs: macs as u64,
            params: params as u64,
        });
    }

    fn linear(&mut self, label: String, kind: CostKind, rows: usize, din: usize, dout: usize) {
        self.push(label, kind, rows * din * dout, din * dout + dout);
    }

    /// Mirrors the order in which the forward pass touches each layer.
    fn sublayer(&mut self, prefix: &str, plan: &StagePlan, global: bool) {
        let c = plan.channels;
        let m = plan.tokens();
        let hidden = MLP_RATIO * c;
        self.push(format!("{prefix}.ln1"), CostKind::Norm, 0, 2 * c);
        let keys = if global {
            for (s, k) in plan.prior_grids.iter().enumerate() {
                let map = plan.map;
                let te = map[0] / k[0];
                let se = (map[1] / k[1]) * (map[2] / k[2]);
                // Temporal output is (k₁, H′, W′); spatial output is the k grid.
                let mid = k[0] * map[1] * map[2] * c;
                let out = k.iter().product::<usize>() * c;
                self.push(format!("{prefix}.pyr{s}.temporal"), CostKind::Conv, mid * te, c * te + c);
                self.push(format!("{prefix}.pyr{s}.spatial"), CostKind::Conv, out * se, c * se + c);
            }
            plan.priors()
        } else {
            plan.grid.tokens_per_window()
        };
        let kv_rows = if global { keys } else { m };
        self.linear(format!("{prefix}.q"), CostKind::Projection, m, c, c);
        self.linear(format!("{prefix}.k"), CostKind::Projection, kv_rows, c, c);
        self.linear(format!("{prefix}.v"), CostKind::Projection, kv_rows, c, c);
        self.push(format!("{prefix}.qk"), CostKind::Attention, m * keys * c, 0);
        self.push(format!("{prefix}.av"), CostKind::Attention, m * keys * c, 0);
        self.linear(format!("{prefix}.out"), CostKind::Projection, m, c, c);
        self.push(format!("{prefix}.ln2"), CostKind::Norm, 0, 2 * c);
        self.linear(format!("{prefix}.mlp_in"), CostKind::Mlp, m, c, hidden);
        self.linear(format!("{prefix}.mlp_out"), CostKind::Mlp, m, hidden, c);
        // Two norms, softmax over heads·M·keys scores, GELU, two residual adds.
        self.elementwise += (2 * m * c + plan.heads * m * keys + m * hidden + 2 * m * c) as u64;
    }
}

fn walk(config: &ModelConfig) -> Result<(Vec<CostTerm>, u64, Vec<AnalyticStage>)> {
    let plans = config.plan()?;
    let mut w = Walker {
        terms: Vec::new(),
        elementwise: 0,
    };
    let mut analytic = Vec::with_capacity(plans.len());
    for plan in &plans {
        let (c, m) = (plan.channels, plan.tokens());
        let vol: usize = plan.merge_extent.iter().product();
        w.push(
            plan.merge_name(),
            CostKind::Embed,
            m * vol * plan.in_channels * c,
            vol * plan.in_channels * c + c,
        );
        for j in 0..plan.blocks {
            let prefix = format!("stage{}.block{j}", plan.index);
            w.sublayer(&format!("{prefix}.lw"), plan, false);
            if j == 0 {
                let taps: usize = PEG_EXTENT.iter().product();
                w.push(format!("stage{}.peg", plan.index), CostKind::Conv, m * taps * c, taps * c + c);
                w.elementwise += (m * c) as u64;
            }
            w.sublayer(&format!("{prefix}.gp"), plan, true);
        }
        let [t, h, ww] = plan.grid.window_extent();
        let gp = cost_gp(&plan.pyramid, plan.map, c)?;
        analytic.push(AnalyticStage {
            stage: plan.index,
            map: plan.map,
            window: plan.grid.window_extent(),
            tokens: m,
            priors: plan.priors(),
            scales: plan.prior_grids.len(),
            channels: c,
            blocks: plan.blocks,
            lw: cost_lw(t, h, ww, m, c)?,
            gp_unfactorized: gp.unfactorized,
            gp_factorized: gp.factorized,
            gp_exact: (plan.priors() * m * c) as u64 + pyramid_conv_exact(&plan.pyramid, plan.map, c)?,
            full: cost_full(m, c)?,
        });
    }
    let last = plans.last().expect("at least one stage");
    let c = last.channels;
    w.elementwise += (last.tokens() * c) as u64;
    w.linear("head".into(), CostKind::Head, 1, c, config.num_classes);
    Ok((w.terms, w.elementwise, analytic))
}

/// Exact parameter count per named layer, from shapes alone.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    let (mut terms, _, _) = walk(config)?;
    for t in &mut terms {
        t.macs = 0;
    }
    Ok(CostReport::assemble(PARAM_UNIT, terms, 0, Vec::new()))
}

/// Itemized MACs and parameters for one clip of extent `(T, H, W)`, with the
/// per-stage formula values alongside.
pub fn count_macs(config: &ModelConfig, input: [usize; 3]) -> Result<CostReport> {
    let config = config.clone().with_input(input);
    let (terms, elementwise, analytic) = walk(&config)?;
    Ok(CostReport::assemble(MAC_UNIT, terms, elementwise, analytic))
}

/// Only the formula section: per stage, full attention against the
/// dual-level layer.
pub fn compare_report(config: &ModelConfig, input: [usize; 3]) -> Result<CostReport> {
    let full = count_macs(config, input)?;
    Ok(CostReport::assemble(MAC_UNIT, Vec::new(), 0, full.analytic))
}

fn group_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(g, _)| g)
}

/// Runs the real forward pass with counting shims and itemizes what it
/// executed. Layers without MACs (norms) are listed from the state's
/// parameters.
pub fn instrument_forward(clip: &Tensor, state: &ModelState) -> Result<CostReport> {
    let tally = Tally::new();
    forward_traced(clip, state, &Probe::new(&tally))?;
    let mut terms: IndexMap<String, CostTerm> = tally
        .into_entries()
        .into_iter()
        .map(|(label, (kind, macs))| {
            let term = CostTerm {
                label: label.clone(),
                kind,
                macs,
                params: 0,
            };
            (label, term)
        })
        .collect();
    state.visit("", &mut |name, t| {
        let g = group_of(name);
        let term = terms.entry(g.to_string()).or_insert_with(|| CostTerm {
            label: g.to_string(),
            kind: CostKind::Norm,
            macs: 0,
            params: 0,
        });
        term.params += t.numel() as u64;
    });
    let [t, h, w, _] = state.config.input_extent;
    let (_, elementwise, analytic) = walk(&state.config.clone().with_input([t, h, w]))?;
    Ok(CostReport::assemble(
        MAC_UNIT,
        terms.into_values().collect(),
        elementwise,
        analytic,
    ))
}
