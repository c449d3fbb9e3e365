use ndarray::Array4;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as Weights;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::AlphaSequence;

pub const DEFAULT_IOU: f64 = 0.5;
const BINARIZE: f64 = 0.5;
const IOU_SCALE: f64 = 1e12;

/// Intersection over union of two boolean volumes; two empty masks count as identical.
pub fn mask_iou(a: &Array4<bool>, b: &Array4<bool>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn per_frame_iou(a: &Array4<bool>, b: &Array4<bool>) -> Vec<f64> {
    (0..a.dim().0)
        .map(|t| {
            let (fa, fb) = (a.index_axis(ndarray::Axis(0), t), b.index_axis(ndarray::Axis(0), t));
            let (mut inter, mut union) = (0usize, 0usize);
            for (&x, &y) in fa.iter().zip(fb.iter()) {
                inter += (x && y) as usize;
                union += (x || y) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Caption of the prediction.
    pub pred: String,
    pub gt: String,
    pub iou: f64,
}

/// Maximum-weight one-to-one assignment on a dense `rows×cols` table,
/// returned as `(row, col)` pairs.
pub fn optimal_assignment(table: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let transposed = rows > cols;
    let (r, c) = if transposed { (cols, rows) } else { (rows, cols) };
    let weights = Weights::from_fn(r, c, |(i, j)| {
        let v = if transposed { table[j][i] } else { table[i][j] };
        (v * IOU_SCALE).round() as i64
    });
    let (_, assign) = kuhn_munkres(&weights);
    assign.into_iter().enumerate().map(|(i, j)| if transposed { (j, i) } else { (i, j) }).collect()
}

fn check_shapes<F: Real>(preds: &[(String, AlphaSequence<F>)], gts: &[(String, AlphaSequence<F>)]) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::Input("no ground-truth instances".into()));
    }
    let dims = gts[0].1.dims();
    if preds.iter().chain(gts).any(|(_, m)| m.dims() != dims) {
        return Err(Error::Shape("instance mattes must share one shape".into()));
    }
    Ok(())
}

/// Optimal IoU assignment of caption-conditioned predictions to ground-truth
/// instances, keeping pairs at or above `iou_thresh`.
pub fn match_instances<F: Real>(
    preds: &[(String, AlphaSequence<F>)],
    gts: &[(String, AlphaSequence<F>)],
    iou_thresh: f64,
) -> Result<Vec<MatchedPair>> {
    Ok(match_indices(preds, gts, iou_thresh)?.into_iter().map(|(_, _, m)| m).collect())
}

fn match_indices<F: Real>(
    preds: &[(String, AlphaSequence<F>)],
    gts: &[(String, AlphaSequence<F>)],
    iou_thresh: f64,
) -> Result<Vec<(usize, usize, MatchedPair)>> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::Config(format!("IoU threshold must lie in (0,1), got {iou_thresh}")));
    }
    check_shapes(preds, gts)?;
    let th = F::lit(BINARIZE);
    let pb: Vec<_> = preds.iter().map(|(_, m)| m.binarize(th)).collect();
    let gb: Vec<_> = gts.iter().map(|(_, m)| m.binarize(th)).collect();
    let table: Vec<Vec<f64>> = pb.iter().map(|p| gb.iter().map(|g| mask_iou(p, g)).collect()).collect();
    let mut out: Vec<_> = optimal_assignment(&table)
        .into_iter()
        .filter(|&(i, j)| table[i][j] >= iou_thresh)
        .map(|(i, j)| (i, j, MatchedPair { pred: preds[i].0.clone(), gt: gts[j].0.clone(), iou: table[i][j] }))
        .collect();
    out.sort_by_key(|&(i, _, _)| i);
    Ok(out)
}

/// Recognition, tracking and matting quality in percent, and their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEvalReport {
    pub rq: f64,
    pub tq: f64,
    pub mq: f64,
    pub vimq: f64,
    pub matching: Vec<MatchedPair>,
}

impl InstanceEvalReport {
    /// Assembles a report, deriving `vimq = rq·tq·mq / 10⁴`.
    pub fn from_scores(rq: f64, tq: f64, mq: f64, matching: Vec<MatchedPair>) -> Self {
        Self { rq, tq, mq, vimq: rq * tq * mq / 10_000.0, matching }
    }
}

pub fn vim_scores<F: Real>(
    preds: &[(String, AlphaSequence<F>)],
    gts: &[(String, AlphaSequence<F>)],
    iou_thresh: f64,
) -> Result<InstanceEvalReport> {
    let matched = match_indices(preds, gts, iou_thresh)?;
    let tp = matched.len() as f64;
    let rq = if tp == 0.0 { 0.0 } else { 100.0 * 2.0 * tp / (preds.len() + gts.len()) as f64 };
    let th = F::lit(BINARIZE);
    let (mut tq, mut mq) = (0.0, 0.0);
    for (i, j, _) in &matched {
        let (p, g) = (&preds[*i].1, &gts[*j].1);
        let frames = per_frame_iou(&p.binarize(th), &g.binarize(th));
        tq += frames.iter().filter(|&&v| v >= iou_thresh).count() as f64 / frames.len() as f64;
        mq += 1.0 - super::mse(p, g)?;
    }
    if tp > 0.0 {
        tq *= 100.0 / tp;
        mq *= 100.0 / tp;
    }
    Ok(InstanceEvalReport::from_scores(rq, tq, mq, matched.into_iter().map(|(_, _, m)| m).collect()))
}
