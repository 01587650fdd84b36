//! Gradient evaluation: central finite differences (the arbiter) and
//! forward-mode differentiation through [`Dual`] numbers.

use super::{Dual, Tensor};
use crate::error::{Error, Result};

pub const FD_EPS: f64 = 1e-5;

fn eval_finite<F: Fn(&Tensor) -> f64>(f: &F, x: &Tensor, at: usize) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!(
            "non-finite function value while perturbing coordinate {at}"
        )))
    }
}

/// Central difference `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε` at the listed flat coordinates.
pub fn finite_diff_at<F>(f: F, x: &Tensor, coords: &[usize], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Numeric(format!("finite-difference step {eps} must be > 0")));
    }
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let hi = eval_finite(&f, &probe, i)?;
            probe.data_mut()[i] = orig - eps;
            let lo = eval_finite(&f, &probe, i)?;
            probe.data_mut()[i] = orig;
            Ok((hi - lo) / (2.0 * eps))
        })
        .collect()
}

/// Full central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    let g = finite_diff_at(f, x, &coords, eps)?;
    Tensor::from_vec(x.shape().to_vec(), g)
}

/// Exact partial derivatives at the listed coordinates, one dual pass each.
pub fn forward_grad_at<F>(f: F, x: &Tensor, coords: &[usize]) -> Result<Vec<f64>>
where
    F: Fn(&Tensor<Dual>) -> Result<Dual>,
{
    let mut seeded = x.map(Dual::constant);
    coords
        .iter()
        .map(|&i| {
            seeded.data_mut()[i].du = 1.0;
            let out = f(&seeded);
            seeded.data_mut()[i].du = 0.0;
            let out = out?;
            if !out.du.is_finite() {
                return Err(Error::Numeric(format!("non-finite tangent at coordinate {i}")));
            }
            Ok(out.du)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative errors out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::softmax_rows;
    use crate::numerics::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform([3, 4], -2.0, 2.0, &mut rng)
    }

    #[test]
    fn quadratic_gradient_is_x() {
        let x = sample(1);
        let g = finite_diff_grad(|t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(), &x, FD_EPS)
            .unwrap();
        assert!(g.max_abs_diff(&x) < 1e-8);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = sample(2);
        let g = finite_diff_grad(|t| t.sum(), &x, FD_EPS).unwrap();
        assert!(g.max_abs_diff(&Tensor::ones([3, 4])) < 1e-9);
    }

    #[test]
    fn softmax_row_sums_have_zero_gradient() {
        let x = sample(3);
        let g = finite_diff_grad(|t| softmax_rows(t).sum(), &x, FD_EPS).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let x = sample(4);
        assert!(finite_diff_grad(|t| t.data()[0].ln() / 0.0, &x, FD_EPS).is_err());
        assert!(finite_diff_grad(|t| t.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn forward_mode_agrees_with_finite_differences() {
        let x = sample(5);
        let coords: Vec<usize> = (0..12).collect();
        let fwd = forward_grad_at(
            |t| Ok(softmax_rows(t).data().iter().enumerate().fold(Dual::constant(0.0), |acc, (i, &v)| {
                acc + v * v * Dual::from_f64(i as f64)
            })),
            &x,
            &coords,
        )
        .unwrap();
        let fd = finite_diff_at(
            |t| softmax_rows(t).data().iter().enumerate().map(|(i, v)| v * v * i as f64).sum(),
            &x,
            &coords,
            FD_EPS,
        )
        .unwrap();
        for (a, b) in fwd.iter().zip(&fd) {
            assert!(relative_error(*a, *b, 1e-6) < 1e-5, "{a} vs {b}");
        }
    }
}
