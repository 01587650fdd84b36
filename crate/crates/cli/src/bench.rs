//! Dual-level attention (LW then GP, projections included) against full
//! attention through the reference oracle (same projections around it).

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use dualformer::analysis::{cost_full, cost_gp, cost_lw};
use dualformer::attention::{gp_attention, lw_attention, AttentionParams, Parameters, PyramidKernels, PyramidSpec, WindowGrid};
use dualformer::oracle::{masked_multi_head_ref, AttentionMask};
use dualformer::trace::Probe;
use dualformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{input, CliError};
use crate::output::{csv_string, grouped, triple, Render};

/// Global prior scales used on every rung.
pub const BENCH_SCALES: [[usize; 3]; 3] = [[1, 1, 1], [2, 2, 2], [4, 4, 4]];

pub struct BenchSettings {
    pub ladder: Vec<[usize; 3]>,
    pub dim: usize,
    pub heads: usize,
    pub window: [usize; 3],
    pub repeat: usize,
    pub seed: u64,
}

pub struct Rung {
    pub map: [usize; 3],
    pub tokens: usize,
    pub priors: usize,
    pub full_macs: u64,
    pub dual_macs: u64,
    pub full_times: Vec<Duration>,
    pub dual_times: Vec<Duration>,
}

fn min_median(ts: &[Duration]) -> (f64, f64) {
    let mut s: Vec<f64> = ts.iter().map(Duration::as_secs_f64).collect();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    let median = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
    (s[0], median)
}

impl Rung {
    pub fn analytic_ratio(&self) -> f64 {
        self.full_macs as f64 / self.dual_macs as f64
    }

    pub fn full_stats(&self) -> (f64, f64) {
        min_median(&self.full_times)
    }

    pub fn dual_stats(&self) -> (f64, f64) {
        min_median(&self.dual_times)
    }

    /// Median full time over median dual time.
    pub fn measured_ratio(&self) -> f64 {
        self.full_stats().1 / self.dual_stats().1
    }
}

pub struct BenchReport {
    pub settings: BenchSettings,
    pub rungs: Vec<Rung>,
}

impl BenchReport {
    /// Whether the measured ratio grows strictly along the ladder.
    pub fn monotone(&self) -> bool {
        self.rungs.windows(2).all(|w| w[1].measured_ratio() > w[0].measured_ratio())
    }
}

fn time<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

pub fn run(settings: BenchSettings) -> Result<BenchReport, CliError> {
    let (d, heads) = (settings.dim, settings.heads);
    if settings.repeat == 0 {
        return Err(input("--repeat must be >= 1"));
    }
    if settings.ladder.is_empty() {
        return Err(input("--ladder needs at least one map"));
    }
    let spec = PyramidSpec::grids(&BENCH_SCALES);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut p = AttentionParams::zeros(d, heads)?;
    p.visit_mut("", &mut |_, t| *t = Tensor::uniform(t.shape().to_vec(), -0.1, 0.1, &mut rng));
    let mut rungs = Vec::with_capacity(settings.ladder.len());
    for &map in &settings.ladder {
        let grid = WindowGrid::new(map, settings.window)?;
        let kernels = PyramidKernels::averaging(&spec, map, d)?;
        let m = grid.token_count();
        let h: Tensor = Tensor::uniform([map[0], map[1], map[2], d], -1.0, 1.0, &mut rng);
        let rows = h.clone().reshape([m, d])?;
        let mask = AttentionMask::all(m, m);
        let [wt, wh, ww] = settings.window;
        let mut rung = Rung {
            map,
            tokens: m,
            priors: spec.prior_count(map)?,
            full_macs: cost_full(m, d)?,
            dual_macs: cost_lw(wt, wh, ww, m, d)? + cost_gp(&spec, map, d)?.factorized,
            full_times: Vec::new(),
            dual_times: Vec::new(),
        };
        for _ in 0..settings.repeat {
            let (r, t) = time(|| -> dualformer::Result<Tensor> {
                let y = lw_attention(&h, &grid, &p, &Probe::off())?;
                gp_attention(&y, &spec, &kernels, &p, &Probe::off())
            });
            r?;
            rung.dual_times.push(t);
            let (r, t) = time(|| -> dualformer::Result<Tensor> {
                let (q, k, v) = (p.q.forward(&rows)?, p.k.forward(&rows)?, p.v.forward(&rows)?);
                p.out.forward(&masked_multi_head_ref(&q, &k, &v, heads, &mask)?)
            });
            r?;
            rung.full_times.push(t);
        }
        rungs.push(rung);
    }
    Ok(BenchReport { settings, rungs })
}

fn ms(s: f64) -> String {
    format!("{:.3}", s * 1e3)
}

impl Render for BenchReport {
    fn table(&self) -> String {
        let st = &self.settings;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "D={} heads={} window={} scales={{(1,1,1),(2,2,2),(4,4,4)}} repeat={}",
            st.dim,
            st.heads,
            triple(st.window),
            st.repeat
        );
        let _ = writeln!(
            s,
            "{:>12}  {:>6}  {:>4}  {:>16}  {:>14}  {:>8}  {:>12}  {:>12}  {:>12}  {:>12}  {:>8}",
            "map", "M", "S", "full MACs", "dual MACs", "MAC x", "full min ms", "full med ms", "dual min ms", "dual med ms", "time x"
        );
        for r in &self.rungs {
            let (fmin, fmed) = r.full_stats();
            let (dmin, dmed) = r.dual_stats();
            let _ = writeln!(
                s,
                "{:>12}  {:>6}  {:>4}  {:>16}  {:>14}  {:>8.2}  {:>12}  {:>12}  {:>12}  {:>12}  {:>8.2}",
                triple(r.map),
                r.tokens,
                r.priors,
                grouped(r.full_macs),
                grouped(r.dual_macs),
                r.analytic_ratio(),
                ms(fmin),
                ms(fmed),
                ms(dmin),
                ms(dmed),
                r.measured_ratio()
            );
        }
        let _ = writeln!(s, "measured ratio grows with M: {}", if self.monotone() { "yes" } else { "no" });
        s
    }

    fn json(&self) -> serde_json::Value {
        let st = &self.settings;
        let rungs: Vec<_> = self
            .rungs
            .iter()
            .map(|r| {
                let (fmin, fmed) = r.full_stats();
                let (dmin, dmed) = r.dual_stats();
                json!({
                    "map": r.map,
                    "tokens": r.tokens,
                    "priors": r.priors,
                    "full_macs": r.full_macs,
                    "dual_macs": r.dual_macs,
                    "analytic_ratio": r.analytic_ratio(),
                    "full_seconds": { "min": fmin, "median": fmed },
                    "dual_seconds": { "min": dmin, "median": dmed },
                    "measured_ratio": r.measured_ratio(),
                })
            })
            .collect();
        json!({
            "dim": st.dim,
            "heads": st.heads,
            "window": st.window,
            "scales": BENCH_SCALES,
            "repeat": st.repeat,
            "rungs": rungs,
            "monotone": self.monotone(),
        })
    }

    fn csv(&self) -> Result<String, CliError> {
        let rows = self.rungs.iter().map(|r| {
            let (fmin, fmed) = r.full_stats();
            let (dmin, dmed) = r.dual_stats();
            vec![
                triple(r.map),
                r.tokens.to_string(),
                r.priors.to_string(),
                r.full_macs.to_string(),
                r.dual_macs.to_string(),
                format!("{:.6}", r.analytic_ratio()),
                format!("{fmin:e}"),
                format!("{fmed:e}"),
                format!("{dmin:e}"),
                format!("{dmed:e}"),
                format!("{:.6}", r.measured_ratio()),
            ]
        });
        csv_string(
            &[
                "map", "tokens", "priors", "full_macs", "dual_macs", "analytic_ratio", "full_min_s", "full_median_s",
                "dual_min_s", "dual_median_s", "measured_ratio",
            ],
            rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        let d = |v: &[u64]| v.iter().map(|&x| Duration::from_millis(x)).collect::<Vec<_>>();
        assert_eq!(min_median(&d(&[5, 1, 3])), (0.001, 0.003));
        assert_eq!(min_median(&d(&[4, 1, 3, 2])), (0.001, 0.0025));
    }

    #[test]
    fn small_ladder_runs() {
        let r = run(BenchSettings {
            ladder: vec![[4, 4, 4], [4, 8, 8]],
            dim: 8,
            heads: 2,
            window: [2, 4, 4],
            repeat: 2,
            seed: 1,
        })
        .unwrap();
        assert_eq!(r.rungs.len(), 2);
        assert_eq!(r.rungs[1].full_macs, cost_full(256, 8).unwrap());
        assert_eq!(r.rungs[1].priors, 73);
        assert!(run(BenchSettings { repeat: 0, ..r.settings }).is_err());
    }
}
