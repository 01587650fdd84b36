use super::state::{BlockParams, DenseConv, ModelState};
use crate::attention::{
    gp_msa_sublayer_traced, lw_msa_sublayer_traced, peg_traced, PegParams, WindowGrid,
};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{conv3d, map_extent, Scalar, Tensor};
use crate::trace::{CostKind, Probe};

/// Classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<S = f64> {
    pub values: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<S = f64> {
    pub logits: Logits<S>,
    /// `[T′, H′, W′, C]` of every stage output, in order.
    pub stage_shapes: Vec<[usize; 4]>,
}

fn finite<S: Scalar>(t: Tensor<S>, layer: &str) -> Result<Tensor<S>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric(format!("non-finite activation after {layer}")))
    }
}

fn strided_projection<S: Scalar>(
    x: &Tensor<S>,
    conv: &DenseConv<S>,
    probe: &Probe,
    kind: CostKind,
) -> Result<Tensor<S>> {
    let (dims, _) = map_extent(x)?;
    let e = conv.extent();
    for axis in 0..3 {
        if dims[axis] % e[axis] != 0 {
            return Err(shape_err!(
                "patch extent {e:?} does not divide input extent {dims:?} on axis {axis}"
            ));
        }
    }
    let y = conv3d(x, &conv.weight, Some(&conv.bias), e, [0; 3])?;
    let vol: usize = e.iter().product();
    probe.record_here(kind, (y.rows() * vol * conv.in_channels() * conv.out_channels()) as u64);
    Ok(y)
}

/// Non-overlapping 3D patch projection of a `[T, H, W, 3]` clip.
pub fn patch_embed<S: Scalar>(clip: &Tensor<S>, conv: &DenseConv<S>) -> Result<Tensor<S>> {
    strided_projection(clip, conv, &Probe::off(), CostKind::Embed)
}

/// Non-overlapping merge; the conv extent is the merge rate.
pub fn patch_merge<S: Scalar>(x: &Tensor<S>, conv: &DenseConv<S>) -> Result<Tensor<S>> {
    strided_projection(x, conv, &Probe::off(), CostKind::Embed)
}

/// LW sub-layer, optional PEG, then GP sub-layer.
pub fn dualformer_block<S: Scalar>(
    x: &Tensor<S>,
    block: &BlockParams<S>,
    peg: Option<&PegParams<S>>,
) -> Result<Tensor<S>> {
    dualformer_block_traced(x, block, peg, &Probe::off(), &Probe::off())
}

fn dualformer_block_traced<S: Scalar>(
    x: &Tensor<S>,
    block: &BlockParams<S>,
    peg: Option<&PegParams<S>>,
    probe: &Probe,
    peg_probe: &Probe,
) -> Result<Tensor<S>> {
    let (map, _) = map_extent(x)?;
    let grid = WindowGrid::new(map, block.window)?;
    let y = lw_msa_sublayer_traced(x, &grid, &block.lw, &probe.scope("lw"))?;
    let mut y = finite(y, "LW-MSA")?;
    if let Some(p) = peg {
        y = finite(peg_traced(&y, p, peg_probe)?, "PEG")?;
    }
    let z = gp_msa_sublayer_traced(&y, &block.pyramid_spec, &block.pyramid, &block.gp, &probe.scope("gp"))?;
    finite(z, "GP-MSA")
}

pub fn forward<S: Scalar>(clip: &Tensor<S>, state: &ModelState<S>) -> Result<Logits<S>> {
    Ok(forward_traced(clip, state, &Probe::off())?.logits)
}

/// Forward pass reporting stage shapes and recording MACs on `probe`.
pub fn forward_traced<S: Scalar>(
    clip: &Tensor<S>,
    state: &ModelState<S>,
    probe: &Probe,
) -> Result<ForwardOutput<S>> {
    if clip.shape() != state.config.input_extent {
        return Err(shape_err!(
            "clip {:?} does not match configured input {:?}",
            clip.shape(),
            state.config.input_extent
        ));
    }
    let mut x = clip.clone();
    let mut stage_shapes = Vec::with_capacity(state.stages.len());
    for st in &state.stages {
        let name = st.merge_name();
        x = finite(
            strided_projection(&x, &st.merge, &probe.scope(&name), CostKind::Embed)?,
            &name,
        )?;
        let sp = probe.scope(&format!("stage{}", st.index));
        for (j, block) in st.blocks.iter().enumerate() {
            let peg = (j == 0).then_some(&st.peg);
            x = dualformer_block_traced(&x, block, peg, &sp.scope(&format!("block{j}")), &sp.scope("peg"))
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("stage{}.block{j}: {m}", st.index)),
                    other => other,
                })?;
        }
        let s = x.shape();
        stage_shapes.push([s[0], s[1], s[2], s[3]]);
    }
    let c = x.last_dim();
    let m = x.rows();
    let mut pooled = vec![S::zero(); c];
    for row in x.data().chunks(c) {
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let inv = S::from_f64(1.0 / m as f64);
    let pooled = Tensor::from_vec([1, c], pooled.into_iter().map(|v| v * inv).collect())?;
    let logits = state.head.forward(&pooled)?;
    probe.scope("head").record_here(CostKind::Head, (c * state.head.d_out()) as u64);
    let values = finite(logits.reshape([state.head.d_out()])?, "head")?;
    Ok(ForwardOutput {
        logits: Logits { values },
        stage_shapes,
    })
}

/// Seeded uniform clip in `[-1, 1)`.
pub fn synthetic_clip(extent: [usize; 4], seed: u64) -> Tensor {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(extent, -1.0, 1.0, &mut rng)
}
