use dualformer::analysis::{
    compare_report, cost_full, cost_gp, cost_lw, count_macs, count_params, instrument_forward, CostReport,
};
use dualformer::attention::PyramidSpec;
use dualformer::checks::random_micro_config;
use dualformer::model::{init_random, synthetic_clip, ModelConfig};
use dualformer::trace::CostKind;
use proptest::prelude::*;

fn check_totals(r: &CostReport) {
    let macs: u64 = r.terms.iter().map(|t| t.macs).sum();
    let params: u64 = r.terms.iter().map(|t| t.params).sum();
    assert_eq!((r.totals.macs, r.totals.params), (macs, params));
    if !r.shares.is_empty() {
        let total: f64 = r.shares.values().sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn tiny_stage_one_reduction() {
    let r = count_macs(&ModelConfig::tiny(), [32, 224, 224]).unwrap();
    let s1 = &r.analytic[0];
    assert_eq!((s1.tokens, s1.priors), (50176, 456));
    let ratio = (s1.tokens as f64 / s1.priors as f64 * 100.0).round() / 100.0;
    assert!((109.5..=110.5).contains(&ratio));
}

#[test]
fn preset_reports_are_consistent() {
    for cfg in [ModelConfig::tiny(), ModelConfig::small(), ModelConfig::base()] {
        check_totals(&count_macs(&cfg, [32, 224, 224]).unwrap());
        check_totals(&count_params(&cfg).unwrap());
    }
}

#[test]
fn json_round_trip_and_csv() {
    let r = count_macs(&ModelConfig::micro(), [4, 16, 16]).unwrap();
    let back = CostReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), r.terms.len() + 1);
    assert!(r.to_table().contains("total MACs"));
}

#[test]
fn scaling_ratios_are_exact() {
    for (t, h, w, m, d) in [(8, 7, 7, 50176, 64), (2, 2, 2, 64, 8), (1, 4, 4, 256, 16)] {
        let lw: Vec<u64> = [1, 2, 4].iter().map(|k| cost_lw(t, h, w, k * m, d).unwrap()).collect();
        let full: Vec<u64> = [1, 2, 4].iter().map(|k| cost_full(k * m, d).unwrap()).collect();
        assert_eq!((lw[1], lw[2]), (2 * lw[0], 4 * lw[0]));
        assert_eq!((full[1], full[2]), (4 * full[0], 16 * full[0]));
    }
}

#[test]
fn dual_cost_beats_full_on_grid_pyramid_stages() {
    // Stages 1 to 3 of every preset pool to fewer priors than tokens.
    for cfg in [ModelConfig::tiny(), ModelConfig::small(), ModelConfig::base()] {
        for plan in cfg.plan().unwrap().iter().take(3) {
            let [t, h, w] = plan.grid.window_extent();
            let (m, c) = (plan.tokens(), plan.channels);
            let dual = cost_lw(t, h, w, m, c).unwrap() + cost_gp(&plan.pyramid, plan.map, c).unwrap().factorized;
            assert!(dual < cost_full(m, c).unwrap(), "stage {}", plan.index);
        }
    }
}

#[test]
fn whole_pyramid_costs_at_least_full_attention() {
    // With S = M every token is a prior, so GP alone is already M²D.
    for cfg in [ModelConfig::tiny(), ModelConfig::small(), ModelConfig::base()] {
        let r = compare_report(&cfg, [32, 224, 224]).unwrap();
        let s4 = &r.analytic[3];
        assert_eq!(s4.priors, s4.tokens);
        assert!(s4.gp_factorized >= s4.full);
        assert!(r.comparisons[3].flagged);
        assert!(r.comparisons[..3].iter().all(|c| !c.flagged));
    }
}

#[test]
fn whole_scale_factorized_cost() {
    let map = [16, 7, 7];
    let gp = cost_gp(&PyramidSpec::whole(), map, 512).unwrap();
    let m = 784u64;
    assert_eq!(gp.unfactorized, (m + 1) * m * 512);
    // S·M·D plus k₁·H′W′·D + k₂k₃·T′·D with k = the map.
    assert_eq!(gp.factorized, m * m * 512 + (16 * 49 + 49 * 16) * 512);
}

#[test]
fn counting_is_deterministic() {
    let cfg = ModelConfig::micro();
    let state = init_random(&cfg, 3).unwrap();
    let clip = synthetic_clip(cfg.input_extent, 3);
    assert_eq!(instrument_forward(&clip, &state).unwrap(), instrument_forward(&clip, &state).unwrap());
    assert_eq!(count_macs(&cfg, [4, 16, 16]).unwrap(), count_macs(&cfg, [4, 16, 16]).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn instrumented_totals_equal_analytic(cfg_seed in any::<u64>()) {
        let cfg = random_micro_config(cfg_seed);
        let [t, h, w, _] = cfg.input_extent;
        let analytic = count_macs(&cfg, [t, h, w]).unwrap();
        let state = init_random(&cfg, cfg_seed).unwrap();
        let inst = instrument_forward(&synthetic_clip(cfg.input_extent, cfg_seed), &state).unwrap();
        prop_assert_eq!(inst.totals, analytic.totals);
        for a in &analytic.analytic {
            prop_assert!(inst.stage_attention_macs(a.stage) >= a.dual_subtotal());
        }
        check_totals(&inst);
        check_totals(&analytic);
        let attention: u64 = inst.terms.iter().filter(|t| t.kind == CostKind::Attention).map(|t| t.macs).sum();
        prop_assert!(attention > 0);
    }
}
