//! Pyramid downsampling: multi-scale global priors built with factorized
//! (temporal, then spatial) strided depth-wise convolutions.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::params::{join, Parameters};
use crate::error::{shape_err, Result};
use crate::numerics::{depthwise_conv3d, map_extent, ConvKernel3D, Scalar, Tensor};
use crate::trace::{CostKind, Probe};

/// Prior grid of one pyramid scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorScale {
    Grid([usize; 3]),
    /// One prior per token: the grid takes the feature-map extent.
    Whole,
}

impl PriorScale {
    pub fn resolve(self, map: [usize; 3]) -> Result<[usize; 3]> {
        let k = match self {
            PriorScale::Grid(k) => k,
            PriorScale::Whole => return Ok(map),
        };
        for axis in 0..3 {
            if k[axis] == 0 || k[axis] > map[axis] || map[axis] % k[axis] != 0 {
                return Err(shape_err!(
                    "pyramid scale {k:?} does not divide map extent {map:?} on axis {axis}"
                ));
            }
        }
        Ok(k)
    }
}

impl fmt::Display for PriorScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorScale::Grid([a, b, c]) => write!(f, "({a},{b},{c})"),
            PriorScale::Whole => f.write_str("whole"),
        }
    }
}

impl Serialize for PriorScale {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        match self {
            PriorScale::Grid(k) => k.serialize(s),
            PriorScale::Whole => s.serialize_str("whole"),
        }
    }
}

impl<'de> Deserialize<'de> for PriorScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Grid([usize; 3]),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Grid(k) => Ok(PriorScale::Grid(k)),
            Repr::Word(w) if w.eq_ignore_ascii_case("whole") => Ok(PriorScale::Whole),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "pyramid scale must be [k1, k2, k3] or \"whole\", got {w:?}"
            ))),
        }
    }
}

/// Ordered list of pyramid scales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PyramidSpec {
    pub scales: Vec<PriorScale>,
}

impl PyramidSpec {
    pub fn new(scales: Vec<PriorScale>) -> Self {
        Self { scales }
    }

    pub fn grids(grids: &[[usize; 3]]) -> Self {
        Self::new(grids.iter().copied().map(PriorScale::Grid).collect())
    }

    pub fn whole() -> Self {
        Self::new(vec![PriorScale::Whole])
    }

    /// `N_g`.
    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn resolve(&self, map: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        if self.scales.is_empty() {
            return Err(shape_err!("pyramid needs at least one scale"));
        }
        self.scales.iter().map(|s| s.resolve(map)).collect()
    }

    /// `S = Σ k₁ⁱ·k₂ⁱ·k₃ⁱ` against a concrete map.
    pub fn prior_count(&self, map: [usize; 3]) -> Result<usize> {
        Ok(self
            .resolve(map)?
            .iter()
            .map(|k| k.iter().product::<usize>())
            .sum())
    }
}

impl fmt::Display for PyramidSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Factorized kernel pair for one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleKernels<S = f64> {
    /// Extent and stride `(T′/k₁, 1, 1)`.
    pub temporal: ConvKernel3D<S>,
    /// Extent and stride `(1, H′/k₂, W′/k₃)`.
    pub spatial: ConvKernel3D<S>,
}

/// Per-scale kernels for a pyramid resolved against one map extent.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidKernels<S = f64> {
    pub scales: Vec<ScaleKernels<S>>,
}

/// Temporal and spatial region extents for scale `k` on `map`.
pub fn scale_regions(map: [usize; 3], k: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    (
        [map[0] / k[0], 1, 1],
        [1, map[1] / k[1], map[2] / k[2]],
    )
}

impl<S: Scalar> PyramidKernels<S> {
    /// Builds kernels with `make(channels, extent)` for both factors of every scale.
    pub fn build(
        spec: &PyramidSpec,
        map: [usize; 3],
        channels: usize,
        mut make: impl FnMut(usize, [usize; 3]) -> ConvKernel3D<S>,
    ) -> Result<Self> {
        let scales = spec
            .resolve(map)?
            .into_iter()
            .map(|k| {
                let (te, se) = scale_regions(map, k);
                ScaleKernels {
                    temporal: make(channels, te),
                    spatial: make(channels, se),
                }
            })
            .collect();
        Ok(Self { scales })
    }

    /// Box-average kernels: the factor pair averages each region uniformly.
    pub fn averaging(spec: &PyramidSpec, map: [usize; 3], channels: usize) -> Result<Self> {
        Self::build(spec, map, channels, |c, e| ConvKernel3D::averaging(c, e, e))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> PyramidKernels<U> {
        PyramidKernels {
            scales: self
                .scales
                .iter()
                .map(|s| ScaleKernels {
                    temporal: s.temporal.map(f),
                    spatial: s.spatial.map(f),
                })
                .collect(),
        }
    }
}

fn visit_kernel<S: Scalar>(k: &ConvKernel3D<S>, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
    f(&join(prefix, "weight"), &k.weight);
    if let Some(b) = &k.bias {
        f(&join(prefix, "bias"), b);
    }
}

fn visit_kernel_mut<S: Scalar>(
    k: &mut ConvKernel3D<S>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Tensor<S>),
) {
    f(&join(prefix, "weight"), &mut k.weight);
    if let Some(b) = &mut k.bias {
        f(&join(prefix, "bias"), b);
    }
}

impl<S: Scalar> Parameters<S> for ConvKernel3D<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        visit_kernel(self, prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        visit_kernel_mut(self, prefix, f);
    }
}

impl<S: Scalar> Parameters<S> for PyramidKernels<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, s) in self.scales.iter().enumerate() {
            let p = join(prefix, &format!("pyr{i}"));
            visit_kernel(&s.temporal, &join(&p, "temporal"), f);
            visit_kernel(&s.spatial, &join(&p, "spatial"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, s) in self.scales.iter_mut().enumerate() {
            let p = join(prefix, &format!("pyr{i}"));
            visit_kernel_mut(&mut s.temporal, &join(&p, "temporal"), f);
            visit_kernel_mut(&mut s.spatial, &join(&p, "spatial"), f);
        }
    }
}

/// Concatenated prior tokens, `[S, D]`, with the first row of each scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPriors<S = f64> {
    pub tokens: Tensor<S>,
    pub offsets: Vec<usize>,
}

impl<S: Scalar> GlobalPriors<S> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn pyramid_downsample<S: Scalar>(
    x: &Tensor<S>,
    spec: &PyramidSpec,
    kernels: &PyramidKernels<S>,
) -> Result<GlobalPriors<S>> {
    pyramid_downsample_traced(x, spec, kernels, &Probe::off())
}

pub fn pyramid_downsample_traced<S: Scalar>(
    x: &Tensor<S>,
    spec: &PyramidSpec,
    kernels: &PyramidKernels<S>,
    probe: &Probe,
) -> Result<GlobalPriors<S>> {
    let (map, d) = map_extent(x)?;
    let grids = spec.resolve(map)?;
    if grids.len() != kernels.scales.len() {
        return Err(shape_err!(
            "pyramid has {} scales but {} kernel pairs",
            grids.len(),
            kernels.scales.len()
        ));
    }
    let mut data = Vec::with_capacity(spec.prior_count(map)? * d);
    let mut offsets = Vec::with_capacity(grids.len());
    for (i, (k, pair)) in grids.iter().zip(&kernels.scales).enumerate() {
        let (te, se) = scale_regions(map, *k);
        if pair.temporal.extent != te
            || pair.temporal.stride != te
            || pair.spatial.extent != se
            || pair.spatial.stride != se
        {
            return Err(shape_err!(
                "scale {i} {k:?} on map {map:?} needs temporal {te:?} and spatial {se:?} kernels"
            ));
        }
        let scope = probe.scope(&format!("pyr{i}"));
        let mid = depthwise_conv3d(x, &pair.temporal, [0; 3])?;
        scope.record("temporal", CostKind::Conv, (mid.numel() * pair.temporal.volume()) as u64);
        let pooled = depthwise_conv3d(&mid, &pair.spatial, [0; 3])?;
        scope.record("spatial", CostKind::Conv, (pooled.numel() * pair.spatial.volume()) as u64);
        debug_assert_eq!(&pooled.shape()[..3], k);
        offsets.push(data.len() / d);
        data.extend_from_slice(pooled.data());
    }
    let s = data.len() / d;
    Ok(GlobalPriors {
        tokens: Tensor::from_vec([s, d], data)?,
        offsets,
    })
}
