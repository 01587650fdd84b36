//! Closed-form attention costs, in multiply-accumulates.

use serde::{Deserialize, Serialize};

use crate::attention::PyramidSpec;
use crate::error::{config_err, Result};

fn positive(vals: &[(&str, usize)]) -> Result<()> {
    for (name, v) in vals {
        if *v == 0 {
            return Err(config_err!("{name} must be >= 1"));
        }
    }
    Ok(())
}

/// Local window attention: `t·h·w·M·D`.
pub fn cost_lw(t: usize, h: usize, w: usize, m: usize, d: usize) -> Result<u64> {
    positive(&[("t", t), ("h", h), ("w", w), ("M", m), ("D", d)])?;
    let n = t * h * w;
    if m % n != 0 {
        return Err(config_err!("window volume {n} does not divide M = {m}"));
    }
    Ok((n * m * d) as u64)
}

/// Full space-time attention: `M²·D`.
pub fn cost_full(m: usize, d: usize) -> Result<u64> {
    positive(&[("M", m), ("D", d)])?;
    Ok((m as u64) * (m as u64) * d as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpCost {
    /// `(S + N_g)·M·D`.
    pub unfactorized: u64,
    /// `(S + Σ(k₁/T′ + k₂k₃/(H′W′)))·M·D`, rounded to nearest.
    pub factorized: u64,
}

/// Both global pyramid attention cost formulas for `spec` on `map`.
pub fn cost_gp(spec: &PyramidSpec, map: [usize; 3], d: usize) -> Result<GpCost> {
    positive(&[("D", d)])?;
    let grids = spec.resolve(map)?;
    let m = map.iter().product::<usize>() as u128;
    let d = d as u128;
    let s: u128 = grids.iter().map(|k| k.iter().product::<usize>() as u128).sum();
    let n_g = grids.len() as u128;
    // Σ k₁/T′ + k₂k₃/(H′W′) over the common denominator T′H′W′ = M.
    let (tp, hw) = (map[0] as u128, (map[1] * map[2]) as u128);
    let num: u128 = grids
        .iter()
        .map(|k| k[0] as u128 * hw + (k[1] * k[2]) as u128 * tp)
        .sum();
    let frac = (num * m * d + m / 2) / m;
    Ok(GpCost {
        unfactorized: ((s + n_g) * m * d) as u64,
        factorized: (s * m * d + frac) as u64,
    })
}

/// What the implementation actually spends on pooling for one GP sub-layer:
/// the temporal pass reads every token (`M·D`) and the spatial pass reads the
/// `k₁·H′·W′` temporal outputs.
pub fn pyramid_conv_exact(spec: &PyramidSpec, map: [usize; 3], d: usize) -> Result<u64> {
    let grids = spec.resolve(map)?;
    let m: usize = map.iter().product();
    Ok(grids
        .iter()
        .map(|k| (m * d + k[0] * map[1] * map[2] * d) as u64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_one_tiny_values() {
        assert_eq!(cost_lw(8, 7, 7, 50176, 64).unwrap(), 1_258_815_488);
        assert_eq!(cost_full(50176, 64).unwrap(), 161_128_382_464);
        let spec = PyramidSpec::grids(&[[4, 4, 4], [8, 7, 7]]);
        let gp = cost_gp(&spec, [16, 56, 56], 64).unwrap();
        assert_eq!(gp.unfactorized, 1_470_758_912);
        // S·M·D plus (4·3136 + 16·16 + 8·3136 + 49·16)·64.
        assert_eq!(gp.factorized, 1_464_336_384 + 2_475_008);
    }

    #[test]
    fn degenerate_windows() {
        assert_eq!(cost_lw(1, 1, 1, 10, 3).unwrap(), 30);
        assert_eq!(cost_lw(2, 2, 2, 8, 5).unwrap(), cost_full(8, 5).unwrap());
        assert_eq!(cost_full(1, 7).unwrap(), 7);
        assert!(cost_lw(2, 2, 2, 12, 5).is_err());
        assert!(cost_full(0, 1).is_err());
    }

    #[test]
    fn whole_scale_substitution() {
        let gp = cost_gp(&PyramidSpec::whole(), [2, 2, 2], 4).unwrap();
        assert_eq!(gp.unfactorized, 9 * 8 * 4);
    }
}
