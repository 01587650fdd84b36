use crate::error::{shape_err, Result};
use crate::numerics::{map_extent, Scalar, Tensor};

const AXES: [&str; 3] = ["time", "height", "width"];

/// Non-overlapping `(t, h, w)` tiling of a `(T′, H′, W′)` token map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    map: [usize; 3],
    window: [usize; 3],
}

impl WindowGrid {
    pub fn new(map: [usize; 3], window: [usize; 3]) -> Result<Self> {
        for axis in 0..3 {
            if window[axis] == 0 || map[axis] == 0 || map[axis] % window[axis] != 0 {
                return Err(shape_err!(
                    "{} axis: window extent {} does not divide map extent {}",
                    AXES[axis],
                    window[axis],
                    map[axis]
                ));
            }
        }
        Ok(Self { map, window })
    }

    pub fn map_extent(&self) -> [usize; 3] {
        self.map
    }

    pub fn window_extent(&self) -> [usize; 3] {
        self.window
    }

    /// Windows along each axis.
    pub fn counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.map[a] / self.window[a])
    }

    pub fn window_count(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    /// `M = T′·H′·W′`.
    pub fn token_count(&self) -> usize {
        self.map.iter().product()
    }

    /// Raster index of every token, listed in partitioned order: windows
    /// lexicographic in (t, h, w) window index, tokens lexicographic in
    /// local (t, h, w).
    pub fn gather_order(&self) -> Vec<usize> {
        let [nt, nh, nw] = self.counts();
        let [t, h, w] = self.window;
        let [_, hh, ww] = self.map;
        let mut order = Vec::with_capacity(self.token_count());
        for bt in 0..nt {
            for bh in 0..nh {
                for bw in 0..nw {
                    for lt in 0..t {
                        for lh in 0..h {
                            for lw in 0..w {
                                let (gt, gh, gw) = (bt * t + lt, bh * h + lh, bw * w + lw);
                                order.push((gt * hh + gh) * ww + gw);
                            }
                        }
                    }
                }
            }
        }
        order
    }

    /// Window id holding the token at raster index `token`.
    pub fn window_of(&self, token: usize) -> usize {
        let [_, hh, ww] = self.map;
        let (gt, gh, gw) = (token / (hh * ww), (token / ww) % hh, token % ww);
        let [_, nh, nw] = self.counts();
        let (bt, bh, bw) = (gt / self.window[0], gh / self.window[1], gw / self.window[2]);
        (bt * nh + bh) * nw + bw
    }

    fn check_map<S: Scalar>(&self, x: &Tensor<S>) -> Result<usize> {
        let (dims, d) = map_extent(x)?;
        for axis in 0..3 {
            if dims[axis] != self.map[axis] {
                return Err(shape_err!(
                    "{} axis: input extent {} but grid expects {}",
                    AXES[axis],
                    dims[axis],
                    self.map[axis]
                ));
            }
        }
        Ok(d)
    }
}

pub(crate) fn gather_rows<S: Scalar>(rows: &[S], d: usize, order: &[usize]) -> Vec<S> {
    let mut out = Vec::with_capacity(order.len() * d);
    for &r in order {
        out.extend_from_slice(&rows[r * d..(r + 1) * d]);
    }
    out
}

pub(crate) fn scatter_rows<S: Scalar>(rows: &[S], d: usize, order: &[usize]) -> Vec<S> {
    let mut out = vec![S::zero(); rows.len()];
    for (i, &r) in order.iter().enumerate() {
        out[r * d..(r + 1) * d].copy_from_slice(&rows[i * d..(i + 1) * d]);
    }
    out
}

/// `[T′, H′, W′, D]` → `[nW, t·h·w, D]`.
pub fn window_partition<S: Scalar>(x: &Tensor<S>, grid: &WindowGrid) -> Result<Tensor<S>> {
    let d = grid.check_map(x)?;
    let data = gather_rows(x.data(), d, &grid.gather_order());
    Tensor::from_vec([grid.window_count(), grid.tokens_per_window(), d], data)
}

/// Inverse of [`window_partition`].
pub fn window_reverse<S: Scalar>(windows: &Tensor<S>, grid: &WindowGrid) -> Result<Tensor<S>> {
    let &[nw, n, d] = windows.shape() else {
        return Err(shape_err!(
            "expected [nW, tokens, D] windows, got {:?}",
            windows.shape()
        ));
    };
    if nw != grid.window_count() || n != grid.tokens_per_window() {
        return Err(shape_err!(
            "windows {:?} do not match grid of {} windows × {} tokens",
            windows.shape(),
            grid.window_count(),
            grid.tokens_per_window()
        ));
    }
    let data = scatter_rows(windows.data(), d, &grid.gather_order());
    let [t, h, w] = grid.map;
    Tensor::from_vec([t, h, w, d], data)
}
