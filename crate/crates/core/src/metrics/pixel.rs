use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{same_dims, AlphaSequence};

pub const DEFAULT_SIGMA: f64 = 1.4;

/// Mean over frames of each frame's mean of `f(pred − gt)`.
fn per_frame_mean<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    same_dims(pred, gt)?;
    let (t, _, _) = pred.dims();
    Ok((0..t)
        .map(|i| {
            let (p, g) = (pred.frame(i), gt.frame(i));
            p.iter().zip(g.iter()).map(|(a, b)| f((*a - *b).f64())).sum::<f64>() / p.len() as f64
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub(crate) fn mad_frames<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>) -> Result<Vec<f64>> {
    per_frame_mean(pred, gt, f64::abs)
}

pub(crate) fn mse_frames<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>) -> Result<Vec<f64>> {
    per_frame_mean(pred, gt, |d| d * d)
}

/// Mean absolute difference.
pub fn mad<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>) -> Result<f64> {
    Ok(mean(&mad_frames(pred, gt)?))
}

/// Mean squared error.
pub fn mse<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>) -> Result<f64> {
    Ok(mean(&mse_frames(pred, gt)?))
}

/// Taps of the 1-D Gaussian and its derivative, truncated where the
/// Gaussian falls below `1e-2` of its normalized peak scale.
pub(crate) fn gaussian_taps(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let eps: f64 = 1e-2;
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * eps).ln()).sqrt()).ceil() as i64;
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let g: Vec<f64> = (-half..=half).map(|u| gauss(u as f64)).collect();
    let dg: Vec<f64> = (-half..=half).map(|u| -(u as f64) * gauss(u as f64) / (sigma * sigma)).collect();
    (g, dg)
}

/// Convolves along one axis with replicated borders.
fn conv_axis(src: &Array2<f64>, taps: &[f64], along_x: bool) -> Array2<f64> {
    let (h, w) = src.dim();
    let half = (taps.len() / 2) as i64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for (k, &c) in taps.iter().enumerate() {
            // Kernel flipped: output[i] = Σ_k c[k]·src[i + half − k].
            let off = half - k as i64;
            let v = if along_x {
                src[[y, (x as i64 + off).clamp(0, w as i64 - 1) as usize]]
            } else {
                src[[(y as i64 + off).clamp(0, h as i64 - 1) as usize, x]]
            };
            acc += c * v;
        }
        acc
    })
}

/// Gaussian-derivative gradient magnitude of one frame.
pub(crate) fn gradient_magnitude<F: Real>(frame: ArrayView2<'_, F>, sigma: f64) -> Array2<f64> {
    let (g, dg) = gaussian_taps(sigma);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() * dg.iter().map(|v| v * v).sum::<f64>().sqrt();
    let src = frame.mapv(|v| v.f64());
    let gx = conv_axis(&conv_axis(&src, &dg, true), &g, false);
    let gy = conv_axis(&conv_axis(&src, &dg, false), &g, true);
    Array2::from_shape_fn(src.dim(), |(y, x)| (gx[[y, x]].powi(2) + gy[[y, x]].powi(2)).sqrt() / norm)
}

pub(crate) fn grad_frames<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, sigma: f64) -> Result<Vec<f64>> {
    same_dims(pred, gt)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok((0..pred.dims().0)
        .map(|i| {
            let a = gradient_magnitude(pred.frame(i), sigma);
            let b = gradient_magnitude(gt.frame(i), sigma);
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
        })
        .collect())
}

/// Mean squared difference of Gaussian-derivative gradient magnitudes.
pub fn grad_metric<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, sigma: f64) -> Result<f64> {
    Ok(mean(&grad_frames(pred, gt, sigma)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn kernel_half_size_at_default_sigma() {
        let (g, dg) = gaussian_taps(1.4);
        assert_eq!(g.len(), 9);
        assert_eq!(dg[4], 0.0);
        assert!(dg[3] > 0.0 && dg[5] < 0.0);
    }

    #[test]
    fn constant_mattes_have_zero_grad_error() {
        let a = AlphaSequence::filled(2, 12, 12, 0.2f64);
        let b = AlphaSequence::filled(2, 12, 12, 0.9f64);
        assert!(grad_metric(&a, &b, 1.4).unwrap() < 1e-24);
    }

    #[test]
    fn constant_difference() {
        let a = AlphaSequence::filled(1, 8, 8, 0.75f64);
        let b = AlphaSequence::filled(1, 8, 8, 0.25f64);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mad(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch_and_bad_sigma() {
        let a = AlphaSequence::<f64>::zeros(1, 8, 8);
        let b = AlphaSequence::<f64>::zeros(1, 8, 16);
        assert!(matches!(mad(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(grad_metric(&a, &a, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn ramp_has_unit_normalized_slope_in_interior() {
        let a = AlphaSequence::new(Array4::from_shape_fn((1, 16, 16, 1), |(_, _, x, _)| x as f64 / 15.0)).unwrap();
        let m = gradient_magnitude(a.frame(0), 1.4);
        assert!(m[[8, 8]] > 0.0);
        assert!((m[[8, 8]] - m[[7, 7]]).abs() < 1e-12);
    }
}
