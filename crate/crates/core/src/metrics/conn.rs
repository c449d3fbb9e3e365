use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{same_dims, AlphaSequence};

pub const DEFAULT_STEP: f64 = 0.1;
const PHI_CUTOFF: f64 = 0.15;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Mask of the largest 4-connected component (ties keep the first in raster order).
pub fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] {
                continue;
            }
            let i = y * w + x;
            for (ny, nx) in [(y.wrapping_sub(1), x), (y, x.wrapping_sub(1))] {
                if ny < h && nx < w && mask[[ny, nx]] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, ny * w + nx));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut size = vec![0usize; h * w];
    for i in 0..h * w {
        if mask[[i / w, i % w]] {
            let r = find(&mut parent, i);
            size[r] += 1;
        }
    }
    let mut best = None;
    for (r, &s) in size.iter().enumerate() {
        if s > 0 && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((r, s));
        }
    }
    let mut out = Array2::from_elem((h, w), false);
    if let Some((root, _)) = best {
        for i in 0..h * w {
            if mask[[i / w, i % w]] && find(&mut parent, i) == root {
                out[[i / w, i % w]] = true;
            }
        }
    }
    out
}

/// Mean per-pixel connectivity error of one frame.
pub(crate) fn conn_error_frame<F: Real>(pred: ArrayView2<'_, F>, gt: ArrayView2<'_, F>, step: f64) -> f64 {
    let (h, w) = pred.dim();
    let n_steps = (1.0 / step + 1e-9).floor() as usize;
    let mut level = Array2::from_elem((h, w), -1.0);
    for k in 1..=n_steps {
        let th = k as f64 * step;
        let both = Array2::from_shape_fn((h, w), |(y, x)| pred[[y, x]].f64() >= th && gt[[y, x]].f64() >= th);
        let omega = largest_component(&both);
        for (l, &o) in level.iter_mut().zip(omega.iter()) {
            if *l == -1.0 && !o {
                *l = (k - 1) as f64 * step;
            }
        }
    }
    level.mapv_inplace(|l| if l == -1.0 { 1.0 } else { l });
    let phi = |a: f64, l: f64| {
        let d = a - l;
        1.0 - if d >= PHI_CUTOFF { d } else { 0.0 }
    };
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let l = level[[y, x]];
            total += (phi(pred[[y, x]].f64(), l) - phi(gt[[y, x]].f64(), l)).abs();
        }
    }
    total / (h * w) as f64
}

pub(crate) fn conn_frames<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, step: f64) -> Result<Vec<f64>> {
    same_dims(pred, gt)?;
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::Config(format!("connectivity step must lie in (0,1), got {step}")));
    }
    Ok((0..pred.dims().0).map(|i| 1.0 - conn_error_frame(pred.frame(i), gt.frame(i), step)).collect())
}

/// Connectivity score in `[0,1]`, higher is better.
pub fn conn_metric<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, step: f64) -> Result<f64> {
    let v = conn_frames(pred, gt, step)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let one = AlphaSequence::filled(2, 8, 8, 1.0f64);
        let zero = AlphaSequence::zeros(2, 8, 8);
        assert_eq!(conn_metric(&zero, &one, 0.1).unwrap(), 0.0);
        assert_eq!(conn_metric(&one, &one, 0.1).unwrap(), 1.0);
        assert!(matches!(conn_metric(&one, &one, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn diagonal_pixels_are_not_connected() {
        let mut m = Array2::from_elem((3, 3), false);
        m[[0, 0]] = true;
        m[[1, 1]] = true;
        m[[2, 1]] = true;
        let c = largest_component(&m);
        assert!(!c[[0, 0]] && c[[1, 1]] && c[[2, 1]]);
    }
}
