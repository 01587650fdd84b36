use crate::error::{config_err, Result};
use crate::numerics::{layer_norm, linear, Scalar, Tensor, LN_EPS};

/// MLP hidden width is `MLP_RATIO · D`.
pub const MLP_RATIO: usize = 4;

/// Named-tensor traversal used for serialization, counting and perturbation.
pub trait Parameters<S: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map with a `[d_in, d_out]` weight and a `d_out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S = f64> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            weight: Tensor::zeros([din, dout]),
            bias: Tensor::zeros([dout]),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            weight: Tensor::eye(d),
            bias: Tensor::zeros([d]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        linear(x, &self.weight, Some(&self.bias))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> Linear<U> {
        Linear {
            weight: self.weight.map(f),
            bias: self.bias.map(f),
        }
    }
}

impl<S: Scalar> Parameters<S> for Linear<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<S = f64> {
    pub gain: Tensor<S>,
    pub shift: Tensor<S>,
    pub eps: f64,
}

impl<S: Scalar> LayerNormParams<S> {
    pub fn unit(d: usize) -> Self {
        Self {
            gain: Tensor::ones([d]),
            shift: Tensor::zeros([d]),
            eps: LN_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        layer_norm(x, &self.gain, &self.shift, self.eps)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> LayerNormParams<U> {
        LayerNormParams {
            gain: self.gain.map(f),
            shift: self.shift.map(f),
            eps: self.eps,
        }
    }
}

impl<S: Scalar> Parameters<S> for LayerNormParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "shift"), &self.shift);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// Parameters of one attention sub-layer: pre-LN multi-head attention with
/// residual, followed by a pre-LN MLP with residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S = f64> {
    pub heads: usize,
    pub q: Linear<S>,
    pub k: Linear<S>,
    pub v: Linear<S>,
    pub out: Linear<S>,
    pub ln1: LayerNormParams<S>,
    pub ln2: LayerNormParams<S>,
    pub mlp_in: Linear<S>,
    pub mlp_out: Linear<S>,
}

impl<S: Scalar> AttentionParams<S> {
    /// Zero projections and MLP, unit layer norms: the sub-layer is an identity.
    pub fn zeros(dim: usize, heads: usize) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(Self {
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            out: Linear::zeros(dim, dim),
            ln1: LayerNormParams::unit(dim),
            ln2: LayerNormParams::unit(dim),
            mlp_in: Linear::zeros(dim, MLP_RATIO * dim),
            mlp_out: Linear::zeros(MLP_RATIO * dim, dim),
        })
    }

    /// Every weight drawn from `draw`, biases zero, unit layer norms.
    pub fn with_weights(dim: usize, heads: usize, draw: &mut dyn FnMut() -> f64) -> Result<Self> {
        let mut p = Self::zeros(dim, heads)?;
        for lin in [&mut p.q, &mut p.k, &mut p.v, &mut p.out, &mut p.mlp_in, &mut p.mlp_out] {
            for w in lin.weight.data_mut() {
                *w = S::from_f64(draw());
            }
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.q.d_in()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_heads(d, self.heads)?;
        let square = [&self.q, &self.k, &self.v, &self.out];
        if square.iter().any(|l| l.d_in() != d || l.d_out() != d) {
            return Err(config_err!("attention projections must all be {d}×{d}"));
        }
        if self.mlp_in.d_in() != d
            || self.mlp_in.d_out() != MLP_RATIO * d
            || self.mlp_out.d_in() != MLP_RATIO * d
            || self.mlp_out.d_out() != d
        {
            return Err(config_err!("MLP must map {d} → {} → {d}", MLP_RATIO * d));
        }
        Ok(())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> AttentionParams<U> {
        AttentionParams {
            heads: self.heads,
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            out: self.out.map(f),
            ln1: self.ln1.map(f),
            ln2: self.ln2.map(f),
            mlp_in: self.mlp_in.map(f),
            mlp_out: self.mlp_out.map(f),
        }
    }
}

pub(crate) fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim % heads != 0 {
        return Err(config_err!("width {dim} is not divisible by {heads} heads"));
    }
    Ok(())
}

impl<S: Scalar> Parameters<S> for AttentionParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.out.visit(&join(prefix, "out"), f);
        self.mlp_in.visit(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit(&join(prefix, "mlp_out"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
        self.mlp_in.visit_mut(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit_mut(&join(prefix, "mlp_out"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
    }
}
