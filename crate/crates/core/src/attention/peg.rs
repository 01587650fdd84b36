use super::params::Parameters;
use crate::error::Result;
use crate::numerics::{depthwise_conv3d, ConvKernel3D, Scalar, Tensor};
use crate::trace::{CostKind, Probe};

pub const PEG_EXTENT: [usize; 3] = [3, 3, 3];
pub const PEG_PADDING: [usize; 3] = [1, 1, 1];

/// Position encoding generator: `x + DWConv₃ₓ₃ₓ₃(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PegParams<S = f64> {
    pub kernel: ConvKernel3D<S>,
}

impl<S: Scalar> PegParams<S> {
    /// Zero weights and bias, so the generator starts as an identity.
    pub fn zeros(channels: usize) -> Self {
        Self {
            kernel: ConvKernel3D::zeros(channels, PEG_EXTENT, [1; 3]),
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> PegParams<U> {
        PegParams {
            kernel: self.kernel.map(f),
        }
    }
}

impl<S: Scalar> Parameters<S> for PegParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.kernel.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.kernel.visit_mut(prefix, f);
    }
}

pub fn peg<S: Scalar>(x: &Tensor<S>, p: &PegParams<S>) -> Result<Tensor<S>> {
    peg_traced(x, p, &Probe::off())
}

pub fn peg_traced<S: Scalar>(x: &Tensor<S>, p: &PegParams<S>, probe: &Probe) -> Result<Tensor<S>> {
    let conv = depthwise_conv3d(x, &p.kernel, PEG_PADDING)?;
    probe.record_here(CostKind::Conv, (conv.numel() * p.kernel.volume()) as u64);
    x.add(&conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_peg(c: usize, rng: &mut ChaCha8Rng) -> PegParams {
        PegParams {
            kernel: ConvKernel3D::new(
                PEG_EXTENT,
                [1; 3],
                Tensor::uniform([c, 3, 3, 3], -1.0, 1.0, rng),
                Some(Tensor::uniform([c], -1.0, 1.0, rng)),
            )
            .unwrap(),
        }
    }

    #[test]
    fn zero_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor = Tensor::uniform([3, 4, 5, 6], -1.0, 1.0, &mut rng);
        assert_eq!(peg(&x, &PegParams::zeros(6)).unwrap(), x);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f64>::ones([3, 4, 5, 6]);
        assert!(matches!(peg(&x, &PegParams::zeros(5)), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn constant_input_far_from_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_peg(2, &mut rng);
        let consts = [0.75, -1.5];
        let mut x = Tensor::zeros([5, 5, 5, 2]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = consts[i % 2];
        }
        let y = peg(&x, &p).unwrap();
        for c in 0..2 {
            let wsum: f64 = p.kernel.weight.data()[c * 27..(c + 1) * 27].iter().sum();
            let want = consts[c] + p.kernel.bias.as_ref().unwrap().data()[c] + consts[c] * wsum;
            // interior voxel sees the full stencil
            assert!((y.get(&[2, 2, 2, c]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_peg(3, &mut rng);
        let dims = [6usize, 7, 8];
        let x: Tensor = Tensor::uniform([dims[0], dims[1], dims[2], 3], -1.0, 1.0, &mut rng);
        // shift by one voxel along width, zero-filling the vacated slice
        let mut shifted = Tensor::zeros(x.shape().to_vec());
        for t in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 1..dims[2] {
                    for c in 0..3 {
                        shifted.set(&[t, h, w, c], x.get(&[t, h, w - 1, c]));
                    }
                }
            }
        }
        let (a, b) = (peg(&x, &p).unwrap(), peg(&shifted, &p).unwrap());
        for t in 2..dims[0] - 2 {
            for h in 2..dims[1] - 2 {
                for w in 3..dims[2] - 2 {
                    for c in 0..3 {
                        assert!((b.get(&[t, h, w, c]) - a.get(&[t, h, w - 1, c])).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
