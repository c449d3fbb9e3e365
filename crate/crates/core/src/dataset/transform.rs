use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

/// Resize-then-translate placement of a foreground instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale: f64,
    pub offset_x: i64,
    pub offset_y: i64,
}

impl Transform {
    pub fn identity() -> Self {
        Self { scale: 1.0, offset_x: 0, offset_y: 0 }
    }

    /// Size of a `h×w` source after scaling.
    pub fn scaled_size(&self, h: usize, w: usize) -> (usize, usize) {
        let sh = ((h as f64) * self.scale).round().max(1.0) as usize;
        let sw = ((w as f64) * self.scale).round().max(1.0) as usize;
        (sh, sw)
    }
}

/// Bilinear sample taps `(i0, i1, frac)` for destination index `d` of a
/// `dst_len` axis mapped onto a `src_len` axis (half-pixel centers).
fn taps(d: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let ratio = src_len as f64 / dst_len as f64;
    let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Resizes `src` (`T×h×w×C`) bilinearly by `transform.scale` and pastes it at the
/// transform's offsets onto a zero canvas of `canvas_h×canvas_w`.
pub(crate) fn place<F: Real>(src: &Array4<F>, transform: &Transform, canvas_h: usize, canvas_w: usize) -> Result<Array4<F>> {
    let (t, h, w, c) = src.dim();
    let (sh, sw) = transform.scaled_size(h, w);
    let (oy, ox) = (transform.offset_y, transform.offset_x);
    let y_lo = oy.max(0);
    let y_hi = (oy + sh as i64).min(canvas_h as i64);
    let x_lo = ox.max(0);
    let x_hi = (ox + sw as i64).min(canvas_w as i64);
    if y_lo >= y_hi || x_lo >= x_hi {
        return Err(Error::Placement);
    }
    let mut out = Array4::zeros((t, canvas_h, canvas_w, c));
    let ytaps: Vec<_> = (0..sh).map(|d| taps(d, sh, h)).collect();
    let xtaps: Vec<_> = (0..sw).map(|d| taps(d, sw, w)).collect();
    for f in 0..t {
        for y in y_lo..y_hi {
            let (y0, y1, fy) = ytaps[(y - oy) as usize];
            let fy = F::lit(fy);
            for x in x_lo..x_hi {
                let (x0, x1, fx) = xtaps[(x - ox) as usize];
                let fx = F::lit(fx);
                for ch in 0..c {
                    let top = src[[f, y0, x0, ch]] * (F::one() - fx) + src[[f, y0, x1, ch]] * fx;
                    let bot = src[[f, y1, x0, ch]] * (F::one() - fx) + src[[f, y1, x1, ch]] * fx;
                    out[[f, y as usize, x as usize, ch]] = top * (F::one() - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Applies one transform to a foreground and its matte onto a
/// `canvas_h×canvas_w` canvas. Pixels outside the placed instance are zero in
/// both outputs.
pub fn apply_transform<F: Real>(
    fg: &FrameSequence<F>,
    matte: &AlphaSequence<F>,
    transform: &Transform,
    canvas_h: usize,
    canvas_w: usize,
) -> Result<(FrameSequence<F>, AlphaSequence<F>)> {
    if !(transform.scale > 0.0) || !transform.scale.is_finite() {
        return Err(Error::Config(format!("transform scale must be positive, got {}", transform.scale)));
    }
    if fg.dims() != matte.dims() {
        return Err(Error::Shape(format!("foreground {:?} and matte {:?} differ", fg.dims(), matte.dims())));
    }
    let f = place(fg.array(), transform, canvas_h, canvas_w)?;
    let m = place(matte.array(), transform, canvas_h, canvas_w)?;
    Ok((FrameSequence::clamped(f)?, AlphaSequence::clamped(m)?))
}

/// Area of the bounding box of `matte > thresh` over all frames; 0 when empty.
pub fn bbox_area<F: Real>(matte: &AlphaSequence<F>, thresh: F) -> usize {
    let (t, h, w) = matte.dims();
    let a = matte.array();
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                if a[[f, y, x, 0]] > thresh {
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                }
            }
        }
    }
    if y0 == usize::MAX {
        0
    } else {
        (y1 - y0 + 1) * (x1 - x0 + 1)
    }
}

pub const SIZE_BALANCE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_AREA_RATIO: f64 = 4.0;

/// True iff largest / smallest bounding-box area is at most `max_ratio`.
pub fn enforce_size_balance<'a, F: Real + 'a>(mattes: impl IntoIterator<Item = &'a AlphaSequence<F>>, max_ratio: f64) -> bool {
    let areas: Vec<usize> = mattes.into_iter().map(|m| bbox_area(m, F::lit(SIZE_BALANCE_THRESHOLD))).collect();
    if areas.len() <= 1 {
        return true;
    }
    let lo = *areas.iter().min().expect("non-empty");
    let hi = *areas.iter().max().expect("non-empty");
    if lo == 0 {
        return false;
    }
    hi as f64 / lo as f64 <= max_ratio
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_matte(h: usize, w: usize, side: usize) -> AlphaSequence<f64> {
        let mut a = Array4::zeros((1, h, w, 1));
        for y in 0..side {
            for x in 0..side {
                a[[0, y, x, 0]] = 1.0;
            }
        }
        AlphaSequence::new(a).unwrap()
    }

    #[test]
    fn identity_transform_is_exact() {
        let fg =
            FrameSequence::new(Array4::from_shape_fn((2, 8, 8, 3), |(t, y, x, c)| ((t + y * 3 + x * 5 + c) % 7) as f64 / 7.0)).unwrap();
        let m = AlphaSequence::new(Array4::from_shape_fn((2, 8, 8, 1), |(_, y, x, _)| ((y + x) % 3) as f64 / 2.0)).unwrap();
        let (f2, m2) = apply_transform(&fg, &m, &Transform::identity(), 8, 8).unwrap();
        assert_eq!(f2, fg);
        assert_eq!(m2, m);
    }

    #[test]
    fn zero_matte_stays_zero() {
        let fg = FrameSequence::<f64>::zeros(1, 8, 8);
        let m = AlphaSequence::zeros(1, 8, 8);
        let tr = Transform { scale: 1.7, offset_x: 3, offset_y: -2 };
        let (_, m2) = apply_transform(&fg, &m, &tr, 16, 16).unwrap();
        assert!(m2.array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_canvas_is_a_placement_error() {
        let fg = FrameSequence::<f32>::zeros(1, 8, 8);
        let m = AlphaSequence::zeros(1, 8, 8);
        let tr = Transform { scale: 1.0, offset_x: 20, offset_y: 0 };
        assert!(matches!(apply_transform(&fg, &m, &tr, 16, 16), Err(Error::Placement)));
        let tr = Transform { scale: 1.0, offset_x: -8, offset_y: 0 };
        assert!(matches!(apply_transform(&fg, &m, &tr, 16, 16), Err(Error::Placement)));
    }

    #[test]
    fn half_scale_of_ones_block_preserves_expected_mass() {
        // Oracle: every bilinear tap of an all-ones 8x8 source is 1, so the
        // placed 4x4 block sums to 16.
        let fg = FrameSequence::zeros(1, 8, 8);
        let m = AlphaSequence::filled(1, 8, 8, 1.0f64);
        let tr = Transform { scale: 0.5, offset_x: 6, offset_y: 6 };
        let (_, m2) = apply_transform(&fg, &m, &tr, 16, 16).unwrap();
        let sum: f64 = m2.array().iter().sum();
        assert!((sum - 16.0).abs() <= 1.0, "{sum}");
    }

    #[test]
    fn size_balance_cases() {
        let big = square_matte(16, 16, 10);
        let small = square_matte(16, 16, 3);
        assert!(enforce_size_balance([&big], 4.0));
        // 100 vs 9
        assert!(!enforce_size_balance([&big, &small], 4.0));
        let mut a = Array4::zeros((1, 16, 16, 1));
        for y in 0..3 {
            for x in 0..10 {
                a[[0, y, x, 0]] = 1.0;
            }
        }
        let thirty = AlphaSequence::new(a).unwrap();
        assert_eq!(bbox_area(&thirty, 0.05), 30);
        assert!(enforce_size_balance([&big, &thirty], 4.0));
    }
}
