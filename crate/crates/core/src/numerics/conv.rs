//! 3D convolutions over channels-last `[T, H, W, C]` maps.
//!
//! Both variants are cross-correlations (no kernel flip) with zero padding.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Depth-wise 3D kernel: one `(k_t, k_h, k_w)` filter per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel3D<S = f64> {
    pub extent: [usize; 3],
    pub stride: [usize; 3],
    /// `[channels, k_t, k_h, k_w]`.
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> ConvKernel3D<S> {
    pub fn new(
        extent: [usize; 3],
        stride: [usize; 3],
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
    ) -> Result<Self> {
        if extent.contains(&0) || stride.contains(&0) {
            return Err(shape_err!(
                "kernel extent {extent:?} and stride {stride:?} must be >= 1"
            ));
        }
        let c = weight.shape()[0];
        if weight.shape() != [c, extent[0], extent[1], extent[2]] {
            return Err(shape_err!(
                "depth-wise weight {:?} does not match extent {extent:?}",
                weight.shape()
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [c] {
                return Err(shape_err!("bias {:?} for {c} channels", b.shape()));
            }
        }
        Ok(Self {
            extent,
            stride,
            weight,
            bias,
        })
    }

    pub fn zeros(channels: usize, extent: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            extent,
            stride,
            weight: Tensor::zeros([channels, extent[0], extent[1], extent[2]]),
            bias: Some(Tensor::zeros([channels])),
        }
    }

    /// Every tap equal to `1 / (k_t·k_h·k_w)`, zero bias: a box average.
    pub fn averaging(channels: usize, extent: [usize; 3], stride: [usize; 3]) -> Self {
        let vol = (extent[0] * extent[1] * extent[2]) as f64;
        Self {
            extent,
            stride,
            weight: Tensor::full(
                [channels, extent[0], extent[1], extent[2]],
                S::from_f64(1.0 / vol),
            ),
            bias: Some(Tensor::zeros([channels])),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn volume(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(S) -> U + Copy) -> ConvKernel3D<U> {
        ConvKernel3D {
            extent: self.extent,
            stride: self.stride,
            weight: self.weight.map(f),
            bias: self.bias.as_ref().map(|b| b.map(f)),
        }
    }
}

/// Output extent along each axis, or a shape error when it is not a positive integer.
pub fn conv_output_extent(
    input: [usize; 3],
    extent: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for axis in 0..3 {
        let span = input[axis] + 2 * padding[axis];
        if span < extent[axis] || (span - extent[axis]) % stride[axis] != 0 {
            return Err(shape_err!(
                "axis {axis}: ({} + 2·{} − {}) / {} + 1 is not a positive integer",
                input[axis],
                padding[axis],
                extent[axis],
                stride[axis]
            ));
        }
        out[axis] = (span - extent[axis]) / stride[axis] + 1;
    }
    Ok(out)
}

pub(crate) fn map_extent<S: Scalar>(x: &Tensor<S>) -> Result<([usize; 3], usize)> {
    match *x.shape() {
        [t, h, w, c] => Ok(([t, h, w], c)),
        _ => Err(shape_err!(
            "expected a [T, H, W, C] feature map, got {:?}",
            x.shape()
        )),
    }
}

/// Source coordinate for output index `o` and tap `k`, or `None` inside the padding.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = o * stride + k;
    if pos < pad || pos - pad >= len {
        None
    } else {
        Some(pos - pad)
    }
}

pub fn depthwise_conv3d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &ConvKernel3D<S>,
    padding: [usize; 3],
) -> Result<Tensor<S>> {
    let (dims, c) = map_extent(x)?;
    if kernel.channels() != c {
        return Err(shape_err!(
            "depth-wise kernel has {} channels, input has {c}",
            kernel.channels()
        ));
    }
    let out = conv_output_extent(dims, kernel.extent, kernel.stride, padding)?;
    let [kt, kh, kw] = kernel.extent;
    let taps = kt * kh * kw;
    // tap-major copy so the channel loop is contiguous
    let w = kernel.weight.data();
    let mut tap_major = vec![S::zero(); taps * c];
    for ch in 0..c {
        for tap in 0..taps {
            tap_major[tap * c + ch] = w[ch * taps + tap];
        }
    }
    let xd = x.data();
    let [_, hh, ww] = dims;
    let mut y = vec![S::zero(); out.iter().product::<usize>() * c];
    for ot in 0..out[0] {
        for oh in 0..out[1] {
            for ow in 0..out[2] {
                let o = ((ot * out[1] + oh) * out[2] + ow) * c;
                let acc = &mut y[o..o + c];
                for a in 0..kt {
                    let Some(it) = source(ot, a, kernel.stride[0], padding[0], dims[0]) else {
                        continue;
                    };
                    for b in 0..kh {
                        let Some(ih) = source(oh, b, kernel.stride[1], padding[1], hh) else {
                            continue;
                        };
                        for d in 0..kw {
                            let Some(iw) = source(ow, d, kernel.stride[2], padding[2], ww) else {
                                continue;
                            };
                            let tap = (a * kh + b) * kw + d;
                            let src = &xd[((it * hh + ih) * ww + iw) * c..][..c];
                            let wt = &tap_major[tap * c..(tap + 1) * c];
                            for ((s, &xv), &wv) in acc.iter_mut().zip(src).zip(wt) {
                                *s += xv * wv;
                            }
                        }
                    }
                }
                if let Some(bias) = &kernel.bias {
                    for (s, &bv) in acc.iter_mut().zip(bias.data()) {
                        *s += bv;
                    }
                }
            }
        }
    }
    Tensor::from_vec([out[0], out[1], out[2], c], y)
}

/// Dense 3D convolution. `weight` is `[k_t, k_h, k_w, C_in, C_out]`.
pub fn conv3d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<S>> {
    let (dims, cin) = map_extent(x)?;
    let &[kt, kh, kw, wcin, cout] = weight.shape() else {
        return Err(shape_err!(
            "dense conv weight must be [k_t, k_h, k_w, C_in, C_out], got {:?}",
            weight.shape()
        ));
    };
    if wcin != cin {
        return Err(shape_err!(
            "conv weight expects {wcin} input channels, input has {cin}"
        ));
    }
    if stride.contains(&0) {
        return Err(shape_err!("stride {stride:?} must be >= 1"));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!("bias {:?} for {cout} output channels", b.shape()));
        }
    }
    let out = conv_output_extent(dims, [kt, kh, kw], stride, padding)?;
    let (xd, wd) = (x.data(), weight.data());
    let [_, hh, ww] = dims;
    let mut y = vec![S::zero(); out.iter().product::<usize>() * cout];
    for ot in 0..out[0] {
        for oh in 0..out[1] {
            for ow in 0..out[2] {
                let o = ((ot * out[1] + oh) * out[2] + ow) * cout;
                let acc = &mut y[o..o + cout];
                for a in 0..kt {
                    let Some(it) = source(ot, a, stride[0], padding[0], dims[0]) else {
                        continue;
                    };
                    for b in 0..kh {
                        let Some(ih) = source(oh, b, stride[1], padding[1], hh) else {
                            continue;
                        };
                        for d in 0..kw {
                            let Some(iw) = source(ow, d, stride[2], padding[2], ww) else {
                                continue;
                            };
                            let tap = (a * kh + b) * kw + d;
                            let src = &xd[((it * hh + ih) * ww + iw) * cin..][..cin];
                            for (ci, &xv) in src.iter().enumerate() {
                                let wrow = &wd[(tap * cin + ci) * cout..][..cout];
                                for (s, &wv) in acc.iter_mut().zip(wrow) {
                                    *s += xv * wv;
                                }
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    for (s, &bv) in acc.iter_mut().zip(b.data()) {
                        *s += bv;
                    }
                }
            }
        }
    }
    Tensor::from_vec([out[0], out[1], out[2], cout], y)
}
