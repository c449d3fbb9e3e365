//! Video and matte sequences, the unit of all visual I/O.

use ndarray::{Array4, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MIN_SIDE: usize = 8;

fn check_unit<F: Real>(data: &Array4<F>, what: &str) -> Result<()> {
    let (t, h, w, _) = data.dim();
    if t < 1 || h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Shape(format!("{what} must be at least 1x{MIN_SIDE}x{MIN_SIDE}, got {t}x{h}x{w}")));
    }
    if let Some(v) = data.iter().find(|v| !(**v >= F::zero() && **v <= F::one())) {
        return Err(Error::Data(format!("{what} value {v} outside [0,1]")));
    }
    Ok(())
}

/// `T×H×W×3` clip with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence<F> {
    frames: Array4<F>,
    pub fps: f32,
}

impl<F: Real> FrameSequence<F> {
    pub fn new(frames: Array4<F>) -> Result<Self> {
        if frames.dim().3 != 3 {
            return Err(Error::Shape(format!("frames need 3 channels, got {}", frames.dim().3)));
        }
        check_unit(&frames, "frame sequence")?;
        Ok(Self { frames, fps: 24.0 })
    }

    /// Builds from values that may fall slightly outside `[0,1]`, clamping them.
    pub fn clamped(mut frames: Array4<F>) -> Result<Self> {
        frames.mapv_inplace(|v| v.max(F::zero()).min(F::one()));
        Self::new(frames)
    }

    pub fn zeros(t: usize, h: usize, w: usize) -> Self {
        Self { frames: Array4::zeros((t, h, w, 3)), fps: 24.0 }
    }

    pub fn array(&self) -> &Array4<F> {
        &self.frames
    }

    pub fn into_array(self) -> Array4<F> {
        self.frames
    }

    /// `(T, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (t, h, w, _) = self.frames.dim();
        (t, h, w)
    }
}

/// `T×H×W×1` opacity sequence with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSequence<F> {
    alpha: Array4<F>,
}

impl<F: Real> AlphaSequence<F> {
    pub fn new(alpha: Array4<F>) -> Result<Self> {
        if alpha.dim().3 != 1 {
            return Err(Error::Shape(format!("alpha needs 1 channel, got {}", alpha.dim().3)));
        }
        check_unit(&alpha, "alpha sequence")?;
        Ok(Self { alpha })
    }

    pub fn clamped(mut alpha: Array4<F>) -> Result<Self> {
        alpha.mapv_inplace(|v| v.max(F::zero()).min(F::one()));
        Self::new(alpha)
    }

    pub fn zeros(t: usize, h: usize, w: usize) -> Self {
        Self { alpha: Array4::zeros((t, h, w, 1)) }
    }

    pub fn filled(t: usize, h: usize, w: usize, v: F) -> Self {
        Self { alpha: Array4::from_elem((t, h, w, 1), v) }
    }

    pub fn array(&self) -> &Array4<F> {
        &self.alpha
    }

    pub fn into_array(self) -> Array4<F> {
        self.alpha
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let (t, h, w, _) = self.alpha.dim();
        (t, h, w)
    }

    /// Replicates the single channel to RGB so the codec can treat it as video.
    pub fn to_rgb(&self) -> FrameSequence<F> {
        let a = &self.alpha;
        let frames = ndarray::concatenate(Axis(3), &[a.view(), a.view(), a.view()]).expect("same-shape concatenation");
        FrameSequence { frames, fps: 24.0 }
    }

    /// Channel mean of an RGB sequence, the inverse of [`AlphaSequence::to_rgb`].
    pub fn from_rgb_mean(rgb: &FrameSequence<F>) -> Self {
        let alpha = rgb.frames.mean_axis(Axis(3)).expect("three channels").insert_axis(Axis(3)).mapv(|v| v.max(F::zero()).min(F::one()));
        Self { alpha }
    }

    /// Binary mask at `thresh` (inclusive).
    pub fn binarize(&self, thresh: F) -> Array4<bool> {
        self.alpha.mapv(|v| v >= thresh)
    }

    pub fn frame(&self, t: usize) -> ndarray::ArrayView2<'_, F> {
        self.alpha.index_axis(Axis(0), t).index_axis_move(Axis(2), 0)
    }
}

pub fn same_dims<F: Real>(a: &AlphaSequence<F>, b: &AlphaSequence<F>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("alpha shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let mut a = Array4::<f64>::zeros((1, 8, 8, 1));
        a[[0, 0, 0, 0]] = 1.5;
        assert!(matches!(AlphaSequence::new(a), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_small_frames() {
        let a = Array4::<f64>::zeros((1, 4, 8, 3));
        assert!(matches!(FrameSequence::new(a), Err(Error::Shape(_))));
    }

    #[test]
    fn rgb_round_trip() {
        let a = AlphaSequence::filled(2, 8, 8, 0.25f32);
        let back = AlphaSequence::from_rgb_mean(&a.to_rgb());
        assert_eq!(a, back);
    }
}
