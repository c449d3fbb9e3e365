//! Matte quality metrics and instance-aware evaluation.
//!
//! Sequence-level values average per-frame values, and dataset aggregates
//! average per-video values.

mod conn;
mod instance;
mod pixel;

pub use conn::{conn_metric, largest_component, DEFAULT_STEP};
pub use instance::{mask_iou, match_instances, optimal_assignment, vim_scores, InstanceEvalReport, MatchedPair, DEFAULT_IOU};
pub use pixel::{grad_metric, mad, mse, DEFAULT_SIGMA};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;
use crate::seq::AlphaSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatteMetricsReport {
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub frames: Vec<FrameMetrics>,
}

impl MatteMetricsReport {
    pub fn compute<F: Real>(pred: &AlphaSequence<F>, gt: &AlphaSequence<F>, sigma: f64, step: f64) -> Result<Self> {
        let mad = pixel::mad_frames(pred, gt)?;
        let mse = pixel::mse_frames(pred, gt)?;
        let grad = pixel::grad_frames(pred, gt, sigma)?;
        let conn = conn::conn_frames(pred, gt, step)?;
        let frames: Vec<FrameMetrics> =
            (0..mad.len()).map(|i| FrameMetrics { mad: mad[i], mse: mse[i], grad: grad[i], conn: conn[i] }).collect();
        let n = frames.len() as f64;
        let avg = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        Ok(Self { mad: avg(|m| m.mad), mse: avg(|m| m.mse), grad: avg(|m| m.grad), conn: avg(|m| m.conn), frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn self_comparison_is_perfect() {
        let a = AlphaSequence::new(Array4::from_shape_fn((3, 8, 8, 1), |(t, y, x, _)| ((t + y * x) % 5) as f64 / 4.0)).unwrap();
        let r = MatteMetricsReport::compute(&a, &a, DEFAULT_SIGMA, DEFAULT_STEP).unwrap();
        assert_eq!((r.mad, r.mse, r.grad, r.conn), (0.0, 0.0, 0.0, 1.0));
        assert_eq!(r.frames.len(), 3);
    }
}
