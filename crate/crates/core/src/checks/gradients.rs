//! Forward-mode gradients against central finite differences.
//!
//! Each case flattens its input and parameters into one vector `θ`, names
//! every span of it, and defines a scalar loss generic over the scalar type,
//! so the same code runs on `f64` (for differences) and `Dual` (for exact
//! tangents).

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random_attention, rng, CheckOptions, CheckResult, Fault};
use crate::attention::{
    gp_msa_sublayer, lw_msa_sublayer, mlp_residual, peg, AttentionParams, Parameters, PegParams,
    PyramidKernels, PyramidSpec, WindowGrid, PEG_EXTENT,
};
use crate::error::Result;
use crate::model::{forward, init_random, synthetic_clip, ModelConfig, ModelState};
use crate::numerics::{finite_diff_at, forward_grad_at, layer_norm, relative_error, ConvKernel3D, Scalar, Tensor};
use crate::trace::Probe;

pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences at
/// `ε = 1e-5` carry about `1e-10` of rounding noise for O(1) losses, so
/// gradients below the floor are compared at that absolute scale.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Named spans of `θ`.
struct Layout {
    spans: Vec<(String, usize, usize)>,
}

impl Layout {
    fn of(input: Option<&Tensor>, params: &[(&str, &dyn Parameters<f64>)]) -> (Layout, Tensor) {
        let mut spans = Vec::new();
        let mut flat = Vec::new();
        let mut push = |name: &str, t: &Tensor| {
            spans.push((name.to_string(), flat.len(), t.numel()));
            flat.extend_from_slice(t.data());
        };
        if let Some(x) = input {
            push("x", x);
        }
        for (prefix, p) in params {
            p.visit(prefix, &mut |n, t| push(n, t));
        }
        let n = flat.len();
        (Layout { spans }, Tensor::from_vec([n], flat).expect("non-empty"))
    }

    fn name_of(&self, i: usize) -> &str {
        self.spans
            .iter()
            .find(|(_, s, n)| (*s..s + n).contains(&i))
            .map_or("?", |(name, _, _)| name)
    }

    fn pick(&self, r: &mut ChaCha8Rng, count: usize, keep: impl Fn(&str) -> bool) -> Vec<usize> {
        let pool: Vec<usize> = self
            .spans
            .iter()
            .filter(|(n, _, _)| keep(n))
            .flat_map(|(_, s, n)| *s..s + n)
            .collect();
        (0..count).map(|_| pool[r.random_range(0..pool.len())]).collect()
    }
}

/// Overwrites `p`'s tensors, in visit order, from `src` starting at `pos`.
fn fill<S: Scalar, P: Parameters<S> + ?Sized>(p: &mut P, src: &[S], pos: &mut usize) {
    p.visit_mut("", &mut |_, t| {
        let n = t.numel();
        t.data_mut().copy_from_slice(&src[*pos..*pos + n]);
        *pos += n;
    });
}

fn take<S: Scalar>(src: &[S], pos: &mut usize, shape: &[usize]) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let t = Tensor::from_vec(shape.to_vec(), src[*pos..*pos + n].to_vec())?;
    *pos += n;
    Ok(t)
}

/// `Σ rᵢ·yᵢ` with fixed random weights, so every output element matters.
fn project<S: Scalar>(y: &Tensor<S>, r: &[f64]) -> S {
    let mut acc = S::zero();
    for (&v, &w) in y.data().iter().zip(r) {
        acc += v * S::from_f64(w);
    }
    acc
}

trait GradCase {
    fn name(&self) -> &'static str;
    fn loss<S: Scalar>(&self, theta: &Tensor<S>) -> Result<S>;
}

fn run<C: GradCase>(
    case: &C,
    layout: &Layout,
    theta: &Tensor,
    coords: &[usize],
    opts: &CheckOptions,
    seed: u64,
) -> Result<CheckResult> {
    let mut res = CheckResult::new(case.name(), GRAD_TOLERANCE);
    let implemented = forward_grad_at(|t| case.loss(t), theta, coords)?;
    let numeric = finite_diff_at(|t| case.loss(t).unwrap_or(f64::NAN), theta, coords, opts.eps)?;
    let mut groups: IndexMap<String, f64> = IndexMap::new();
    for (k, (&a, &b)) in implemented.iter().zip(&numeric).enumerate() {
        let a = Fault::apply_scalar(opts.fault, a);
        let err = relative_error(a, b, GRAD_FLOOR);
        let name = layout.name_of(coords[k]);
        let slot = groups.entry(name.to_string()).or_insert(0.0);
        *slot = if err.is_nan() { f64::INFINITY } else { slot.max(err) };
        res.observe(err, seed, || format!("coord {} ({name}): implemented {a:.6e} vs numeric {b:.6e}", coords[k]));
    }
    groups.sort_keys();
    res.groups = groups.into_iter().collect();
    Ok(res)
}

struct LnCase {
    rows: usize,
    d: usize,
    r: Vec<f64>,
}

impl GradCase for LnCase {
    fn name(&self) -> &'static str {
        "grad layer_norm"
    }
    fn loss<S: Scalar>(&self, theta: &Tensor<S>) -> Result<S> {
        let mut pos = 0;
        let x = take(theta.data(), &mut pos, &[self.rows, self.d])?;
        let gain = take(theta.data(), &mut pos, &[self.d])?;
        let shift = take(theta.data(), &mut pos, &[self.d])?;
        let y = layer_norm(&x, &gain, &shift, crate::numerics::LN_EPS)?;
        Ok(project(&y, &self.r))
    }
}

/// A sub-layer case: input map plus one set of attention parameters, and
/// optional extra parameters (pyramid kernels).
struct SublayerCase {
    kind: &'static str,
    map: [usize; 3],
    p: AttentionParams,
    window: [usize; 3],
    spec: PyramidSpec,
    kernels: PyramidKernels,
    r: Vec<f64>,
}

impl GradCase for SublayerCase {
    fn name(&self) -> &'static str {
        self.kind
    }
    fn loss<S: Scalar>(&self, theta: &Tensor<S>) -> Result<S> {
        let d = self.p.dim();
        let mut pos = 0;
        let x = take(theta.data(), &mut pos, &[self.map[0], self.map[1], self.map[2], d])?;
        let mut p = self.p.map(S::from_f64);
        fill(&mut p, theta.data(), &mut pos);
        let y = match self.kind {
            "grad lw_msa" => lw_msa_sublayer(&x, &WindowGrid::new(self.map, self.window)?, &p)?,
            "grad gp_msa" => {
                let mut k = self.kernels.map(S::from_f64);
                fill(&mut k, theta.data(), &mut pos);
                gp_msa_sublayer(&x, &self.spec, &k, &p)?
            }
            _ => mlp_residual(&x, &p, &Probe::off())?,
        };
        Ok(project(&y, &self.r))
    }
}

struct PegCase {
    map: [usize; 3],
    p: PegParams,
    r: Vec<f64>,
}

impl GradCase for PegCase {
    fn name(&self) -> &'static str {
        "grad peg"
    }
    fn loss<S: Scalar>(&self, theta: &Tensor<S>) -> Result<S> {
        let c = self.p.kernel.channels();
        let mut pos = 0;
        let x = take(theta.data(), &mut pos, &[self.map[0], self.map[1], self.map[2], c])?;
        let mut p = self.p.map(S::from_f64);
        fill(&mut p, theta.data(), &mut pos);
        Ok(project(&peg(&x, &p)?, &self.r))
    }
}

struct ModelCase {
    state: ModelState,
    clip: Tensor,
    target: usize,
}

impl GradCase for ModelCase {
    fn name(&self) -> &'static str {
        "grad micro model (CE loss)"
    }
    fn loss<S: Scalar>(&self, theta: &Tensor<S>) -> Result<S> {
        let mut state = self.state.map(S::from_f64);
        let mut pos = 0;
        fill(&mut state, theta.data(), &mut pos);
        let logits = forward(&self.clip.map(S::from_f64), &state)?.values;
        // Cross-entropy: logsumexp(z) − z_target.
        let z = logits.data();
        let max = z.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        let max = S::from_f64(max);
        let mut sum = S::zero();
        for &v in z {
            sum += (v - max).exp();
        }
        Ok(sum.ln() + max - z[self.target])
    }
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, r)
}

fn weights(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Randomizes every parameter so that no gradient is trivially zero.
fn scramble(state: &mut ModelState, r: &mut ChaCha8Rng) {
    state.visit_mut("", &mut |name, t| {
        let (lo, hi) = if name.ends_with(".gain") { (0.5, 1.5) } else { (-0.3, 0.3) };
        for v in t.data_mut() {
            *v = r.random_range(lo..hi);
        }
    });
}

/// Gradient checks for LN, MLP, PEG, LW, GP and the micro model end to end.
pub fn gradient_suites(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut r = rng(opts.seed);
    let all = |_: &str| true;

    {
        let seed = opts.seed;
        let (rows, d) = (5, 8);
        let x = random_tensor(&[rows, d], -2.0, 2.0, &mut r);
        let gain = random_tensor(&[d], 0.5, 1.5, &mut r);
        let shift = random_tensor(&[d], -0.5, 0.5, &mut r);
        let flat: Vec<f64> = [x.data(), gain.data(), shift.data()].concat();
        let n = flat.len();
        let layout = Layout {
            spans: vec![("x".into(), 0, rows * d), ("gain".into(), rows * d, d), ("shift".into(), rows * d + d, d)],
        };
        let theta = Tensor::from_vec([n], flat)?;
        let case = LnCase { rows, d, r: weights(rows * d, &mut r) };
        let coords = layout.pick(&mut r, opts.coords, all);
        out.push(run(&case, &layout, &theta, &coords, opts, seed)?);
    }

    let map = [2, 4, 4];
    let d = 8;
    let m: usize = map.iter().product();
    for (kind, keep) in [
        ("grad mlp", (|n: &str| n == "x" || n.starts_with("mlp") || n.starts_with("ln2")) as fn(&str) -> bool),
        ("grad lw_msa", |_: &str| true),
        ("grad gp_msa", |_: &str| true),
    ] {
        let seed = opts.seed;
        let p = random_attention(d, 2, &mut r);
        let spec = PyramidSpec::grids(&[[1, 1, 1], [2, 2, 2]]);
        let kernels = PyramidKernels::build(&spec, map, d, |c, e| {
            let w = random_tensor(&[c, e[0], e[1], e[2]], -0.5, 0.5, &mut r);
            let b = random_tensor(&[c], -0.1, 0.1, &mut r);
            ConvKernel3D::new(e, e, w, Some(b)).expect("valid kernel")
        })?;
        let x = random_tensor(&[map[0], map[1], map[2], d], -1.0, 1.0, &mut r);
        let global = kind == "grad gp_msa";
        let mut params: Vec<(&str, &dyn Parameters<f64>)> = vec![("", &p)];
        if global {
            params.push(("", &kernels));
        }
        let (layout, theta) = Layout::of(Some(&x), &params);
        let case = SublayerCase {
            kind,
            map,
            p: p.clone(),
            window: [1, 2, 2],
            spec: spec.clone(),
            kernels: kernels.clone(),
            r: weights(m * d, &mut r),
        };
        let coords = layout.pick(&mut r, opts.coords, keep);
        out.push(run(&case, &layout, &theta, &coords, opts, seed)?);
    }

    {
        let seed = opts.seed;
        let c = 4;
        let w = random_tensor(&[c, PEG_EXTENT[0], PEG_EXTENT[1], PEG_EXTENT[2]], -0.5, 0.5, &mut r);
        let b = random_tensor(&[c], -0.1, 0.1, &mut r);
        let p = PegParams {
            kernel: ConvKernel3D::new(PEG_EXTENT, [1; 3], w, Some(b))?,
        };
        let x = random_tensor(&[3, 4, 4, c], -1.0, 1.0, &mut r);
        let (layout, theta) = Layout::of(Some(&x), &[("", &p)]);
        let case = PegCase { map: [3, 4, 4], p, r: weights(3 * 16 * c, &mut r) };
        let coords = layout.pick(&mut r, opts.coords, all);
        out.push(run(&case, &layout, &theta, &coords, opts, seed)?);
    }

    {
        let seed = opts.seed;
        let cfg = ModelConfig::micro();
        let mut state = init_random(&cfg, seed)?;
        scramble(&mut state, &mut r);
        let clip = synthetic_clip(cfg.input_extent, seed ^ 0xc11b);
        let target = r.random_range(0..cfg.num_classes);
        let (layout, theta) = Layout::of(None, &[("", &state)]);
        let coords = layout.pick(&mut r, opts.coords, all);
        let case = ModelCase { state, clip, target };
        out.push(run(&case, &layout, &theta, &coords, opts, seed)?);
    }
    Ok(out)
}
