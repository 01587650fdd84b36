//! Cost model: the closed-form attention costs, an exact shape walker for
//! parameters and MACs, and the instrumented forward-pass counter.

mod count;
mod formulas;
mod report;

pub use count::{compare_report, count_macs, count_params, instrument_forward};
pub use formulas::{cost_full, cost_gp, cost_lw, pyramid_conv_exact, GpCost};
pub use report::{AnalyticStage, Comparison, CostReport, CostTerm, Totals, MAC_UNIT, PARAM_UNIT};
