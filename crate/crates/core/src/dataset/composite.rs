use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::FrameSequence;

use super::InstanceSpec;

/// Layers instances over the background in list order (back to front):
/// `I ← α∘F + (1−α)∘I` per instance and frame, then clamps to `[0,1]`.
pub fn composite<F: Real>(background: &FrameSequence<F>, instances: &[InstanceSpec<F>]) -> Result<FrameSequence<F>> {
    let dims = background.dims();
    let mut out = background.array().clone();
    for inst in instances {
        if inst.foreground.dims() != dims || inst.matte.dims() != dims {
            return Err(Error::Data(format!(
                "instance {} shape {:?} does not match background {:?}",
                inst.instance_id,
                inst.foreground.dims(),
                dims
            )));
        }
        let alpha = inst.matte.array();
        let fg = inst.foreground.array();
        ndarray::Zip::indexed(&mut out).and(fg).for_each(|(t, y, x, _), o, &f| {
            let a = alpha[[t, y, x, 0]];
            *o = a * f + (F::one() - a) * *o;
        });
    }
    FrameSequence::clamped(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transform;
    use crate::seq::AlphaSequence;
    use ndarray::Array4;

    fn inst(fg: f64, alpha: f64) -> InstanceSpec<f64> {
        InstanceSpec {
            instance_id: 0,
            foreground: FrameSequence::new(Array4::from_elem((2, 8, 8, 3), fg)).unwrap(),
            matte: AlphaSequence::filled(2, 8, 8, alpha),
            caption: "x".into(),
            transform: Transform::identity(),
        }
    }

    #[test]
    fn half_alpha_blend() {
        let bg = FrameSequence::zeros(2, 8, 8);
        let out = composite(&bg, &[inst(1.0, 0.5)]).unwrap();
        assert!(out.array().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn later_instances_cover_earlier_ones() {
        let bg = FrameSequence::zeros(2, 8, 8);
        let out = composite(&bg, &[inst(0.2, 1.0), inst(0.9, 1.0)]).unwrap();
        assert!(out.array().iter().all(|&v| v == 0.9));
    }

    #[test]
    fn shape_mismatch_is_a_data_error() {
        let bg = FrameSequence::zeros(1, 8, 8);
        assert!(matches!(composite(&bg, &[inst(1.0, 1.0)]), Err(Error::Data(_))));
    }
}
