//! 2D to 3D kernel inflation: replicate along time, divide by the temporal
//! extent, so a temporally constant clip sees the 2D response.

use crate::error::{config_err, shape_err, Result};
use crate::numerics::{Scalar, Tensor};

/// `[k_h, k_w, C_in, C_out]` to `[t, k_h, k_w, C_in, C_out]`.
pub fn inflate_2d<S: Scalar>(weights_2d: &Tensor<S>, t_extent: usize) -> Result<Tensor<S>> {
    if weights_2d.rank() != 4 {
        return Err(shape_err!(
            "2D kernel must be [k_h, k_w, C_in, C_out], got {:?}",
            weights_2d.shape()
        ));
    }
    replicate(weights_2d, t_extent, 0)
}

/// Depth-wise variant: `[C, k_h, k_w]` to `[C, t, k_h, k_w]`.
pub fn inflate_depthwise<S: Scalar>(weights_2d: &Tensor<S>, t_extent: usize) -> Result<Tensor<S>> {
    if weights_2d.rank() != 3 {
        return Err(shape_err!(
            "depth-wise 2D kernel must be [C, k_h, k_w], got {:?}",
            weights_2d.shape()
        ));
    }
    replicate(weights_2d, t_extent, 1)
}

/// Inserts a new axis of length `t` at `axis`, each slice `w / t`.
fn replicate<S: Scalar>(w: &Tensor<S>, t: usize, axis: usize) -> Result<Tensor<S>> {
    if t == 0 {
        return Err(config_err!("temporal extent must be >= 1"));
    }
    let scaled: Vec<S> = if t == 1 {
        w.data().to_vec()
    } else {
        let inv = S::from_f64(t as f64);
        w.data().iter().map(|&v| v / inv).collect()
    };
    let outer: usize = w.shape()[..axis].iter().product();
    let inner = w.numel() / outer;
    let mut data = Vec::with_capacity(w.numel() * t);
    for o in 0..outer {
        for _ in 0..t {
            data.extend_from_slice(&scaled[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = w.shape().to_vec();
    shape.insert(axis, t);
    Tensor::from_vec(shape, data)
}
