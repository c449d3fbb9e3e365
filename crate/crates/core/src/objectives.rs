//! Training losses and the KL-variance diagnostic.
//!
//! Each loss has a plain evaluation on latents or mattes and, where it enters
//! training, a graph form returning a differentiable `1×1` node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::codec::LatentBlock;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{same_dims, AlphaSequence};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_LAMBDA1: f64 = 0.9;

fn mean_sq<F: Real>(a: &[F], b: &[F]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(x, y)| (*x - *y).f64().powi(2)).sum::<f64>() / n
}

/// Mean squared error between true and predicted noise.
pub fn diffusion_loss<F: Real>(eps: &LatentBlock<F>, eps_hat: &LatentBlock<F>) -> Result<f64> {
    if eps.shape() != eps_hat.shape() {
        return Err(Error::Shape(format!("noise shapes differ: {:?} vs {:?}", eps.shape(), eps_hat.shape())));
    }
    Ok(mean_sq(eps.as_slice(), eps_hat.as_slice()))
}

/// Pixel-space mean squared error between mattes.
pub fn pixel_l2<F: Real>(m: &AlphaSequence<F>, m_hat: &AlphaSequence<F>) -> Result<f64> {
    same_dims(m, m_hat)?;
    Ok(mean_sq(m.array().as_slice().expect("standard layout"), m_hat.array().as_slice().expect("standard layout")))
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_sim<F: Real>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vector lengths differ: {} vs {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.f64(), y.f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct ContrastiveBatch<F> {
    pub anchor: LatentBlock<F>,
    pub positive: LatentBlock<F>,
    pub negatives: Vec<LatentBlock<F>>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrastive {
    pub loss: f64,
    /// No negatives were available, so the term contributes nothing.
    pub skipped: bool,
}

/// `−log softmax` of the positive among `[s⁺, s⁻…] / τ`, max-subtracted.
pub fn infonce_from_similarities(s_pos: f64, s_neg: &[f64], tau: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(s_pos).chain(s_neg.iter().copied()).map(|s| s / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    (lse - logits[0]).max(0.0)
}

/// Latent InfoNCE with the positive included in the denominator.
pub fn latent_infonce<F: Real>(batch: &ContrastiveBatch<F>) -> Result<Contrastive> {
    if !(batch.tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", batch.tau)));
    }
    let shape = batch.anchor.shape();
    if batch.positive.shape() != shape || batch.negatives.iter().any(|n| n.shape() != shape) {
        return Err(Error::Shape("contrastive latents must share one shape".into()));
    }
    if batch.negatives.is_empty() {
        return Ok(Contrastive { loss: 0.0, skipped: true });
    }
    let a = batch.anchor.as_slice();
    let s_pos = cosine_sim(a, batch.positive.as_slice())?;
    let s_neg = batch.negatives.iter().map(|n| cosine_sim(a, n.as_slice())).collect::<Result<Vec<_>>>()?;
    Ok(Contrastive { loss: infonce_from_similarities(s_pos, &s_neg, batch.tau), skipped: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: DEFAULT_LAMBDA1 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda1) {
            return Err(Error::Config(format!("lambda1 must lie in [0,1], got {lambda1}")));
        }
        Ok(Self { lambda1 })
    }
}

/// `λ₁·l_diff + (1−λ₁)·l_nce`.
pub fn combined_loss(l_diff: f64, l_nce: f64, w: LossWeights) -> f64 {
    w.lambda1 * l_diff + (1.0 - w.lambda1) * l_nce
}

/// Mean squared difference of two equally shaped nodes.
pub fn mse_graph<F: Real>(g: &mut Graph<F>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.mean(sq)
}

/// Cosine similarity of two equally shaped nodes as a `1×1` node.
pub fn cosine_graph<F: Real>(g: &mut Graph<F>, a: Var, b: Var) -> Var {
    let ab = g.mul(a, b);
    let dot = g.sum(ab);
    let a2 = g.square(a);
    let na = g.sum(a2);
    let b2 = g.square(b);
    let nb = g.sum(b2);
    let den = g.mul(na, nb);
    let den = g.sqrt(den);
    let inv = g.recip(den);
    g.mul(dot, inv)
}

/// Graph InfoNCE; `None` when there are no negatives.
pub fn infonce_graph<F: Real>(g: &mut Graph<F>, anchor: Var, positive: Var, negatives: &[Var], tau: f64) -> Option<Var> {
    if negatives.is_empty() {
        return None;
    }
    let mut sims = vec![cosine_graph(g, anchor, positive)];
    for &n in negatives {
        sims.push(cosine_graph(g, anchor, n));
    }
    let logits = g.concat_cols(&sims);
    let logits = g.scale(logits, F::lit(1.0 / tau));
    let lse = g.log_sum_exp(logits);
    let pos = g.slice_cols(logits, 0, 1);
    Some(g.sub(lse, pos))
}

/// Graph form of [`combined_loss`]; a skipped contrastive term contributes zero.
pub fn combined_graph<F: Real>(g: &mut Graph<F>, l_diff: Var, l_nce: Option<Var>, w: LossWeights) -> Var {
    let d = g.scale(l_diff, F::lit(w.lambda1));
    match l_nce {
        Some(n) if w.lambda1 < 1.0 => {
            let n = g.scale(n, F::lit(1.0 - w.lambda1));
            g.add(d, n)
        }
        _ => d,
    }
}

pub const KL_PROBE_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlProbeConfig {
    pub bootstrap: usize,
    /// Lower bound on fitted per-dimension variances, as a fraction of the
    /// overall variance of the reference sample.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for KlProbeConfig {
    fn default() -> Self {
        Self { bootstrap: 200, var_floor: 1e-4, seed: 0 }
    }
}

/// Matched draws from a reference and a predicted distribution in one space.
#[derive(Debug, Clone, Default)]
pub struct SamplePairs {
    pub reference: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlProbeReport {
    pub kl_pixel: f64,
    pub kl_latent: f64,
    pub var_pixel: f64,
    pub var_latent: f64,
}

fn fit(samples: &[&[f64]], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(*s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((acc, m), v) in var.iter_mut().zip(&mean).zip(*s) {
            *acc += (v - m).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v = (*v / n).max(floor));
    (mean, var)
}

/// `Σ_d KL(N(μ_p,σ_p²) ‖ N(μ_q,σ_q²))` between per-dimension Gaussian fits.
pub fn gaussian_kl(p: &[&[f64]], q: &[&[f64]], floor: f64) -> f64 {
    let (mp, vp) = fit(p, floor);
    let (mq, vq) = fit(q, floor);
    mp.iter()
        .zip(&vp)
        .zip(mq.iter().zip(&vq))
        .map(|((m1, v1), (m2, v2))| 0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0))
        .sum()
}

/// `KL(predicted ‖ reference)` on the full sample and the variance of its
/// paired bootstrap replicates.
pub fn bootstrap_kl(pairs: &SamplePairs, cfg: &KlProbeConfig) -> Result<(f64, f64)> {
    let n = pairs.reference.len();
    if n < KL_PROBE_MIN_SAMPLES || pairs.predicted.len() != n {
        return Err(Error::Input(format!(
            "KL probe needs at least {KL_PROBE_MIN_SAMPLES} matched pairs, got {} and {}",
            n,
            pairs.predicted.len()
        )));
    }
    let dim = pairs.reference[0].len();
    if dim == 0 || pairs.reference.iter().chain(&pairs.predicted).any(|s| s.len() != dim) {
        return Err(Error::Shape("KL probe samples must share one non-zero length".into()));
    }
    if cfg.bootstrap < 2 || !(cfg.var_floor > 0.0) {
        return Err(Error::Config("KL probe needs bootstrap >= 2 and a positive variance floor".into()));
    }
    let all_p: Vec<&[f64]> = pairs.reference.iter().map(Vec::as_slice).collect();
    let all_q: Vec<&[f64]> = pairs.predicted.iter().map(Vec::as_slice).collect();
    // A relative floor keeps the estimate invariant to rescaling the space.
    let count = (n * dim) as f64;
    let mean = all_p.iter().flat_map(|s| s.iter()).sum::<f64>() / count;
    let spread = all_p.iter().flat_map(|s| s.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let floor = if spread > 0.0 { cfg.var_floor * spread } else { cfg.var_floor };
    let estimate = gaussian_kl(&all_q, &all_p, floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reps: Vec<f64> = (0..cfg.bootstrap)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let p: Vec<&[f64]> = idx.iter().map(|&i| all_p[i]).collect();
            let q: Vec<&[f64]> = idx.iter().map(|&i| all_q[i]).collect();
            gaussian_kl(&q, &p, floor)
        })
        .collect();
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok((estimate, var))
}

/// Bootstrap variance of the KL estimator in pixel space and in latent space.
pub fn kl_variance_probe(pixel: &SamplePairs, latent: &SamplePairs, cfg: &KlProbeConfig) -> Result<KlProbeReport> {
    if pixel.reference.len() != latent.reference.len() {
        return Err(Error::Input("pixel and latent probes need matched sample counts".into()));
    }
    let (kl_pixel, var_pixel) = bootstrap_kl(pixel, cfg)?;
    let (kl_latent, var_latent) = bootstrap_kl(latent, cfg)?;
    Ok(KlProbeReport { kl_pixel, kl_latent, var_pixel, var_latent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn block(v: Vec<f64>) -> LatentBlock<f64> {
        LatentBlock::new(Array4::from_shape_vec((1, 1, 1, v.len()), v).unwrap(), 1).unwrap()
    }

    #[test]
    fn diffusion_loss_constant_cases() {
        let z = block(vec![0.0; 6]);
        let o = block(vec![1.0; 6]);
        assert_eq!(diffusion_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(diffusion_loss(&z, &o).unwrap(), 1.0);
        assert!(matches!(diffusion_loss(&z, &block(vec![0.0; 5])), Err(Error::Shape(_))));
    }

    #[test]
    fn pixel_l2_extremes() {
        let a = AlphaSequence::filled(1, 8, 8, 1.0f64);
        let b = AlphaSequence::zeros(1, 8, 8);
        assert_eq!(pixel_l2(&a, &b).unwrap(), 1.0);
        assert_eq!(pixel_l2(&a, &a).unwrap(), 0.0);
        assert!(pixel_l2(&a, &AlphaSequence::zeros(2, 8, 8)).is_err());
    }

    #[test]
    fn cosine_cases() {
        let a = [1.0, 2.0, -1.0];
        assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_sim(&a, &[-1.0, -2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn infonce_skips_without_negatives_and_validates_tau() {
        let a = block(vec![1.0, 0.0]);
        let batch = ContrastiveBatch { anchor: a.clone(), positive: a.clone(), negatives: vec![], tau: 0.1 };
        assert_eq!(latent_infonce(&batch).unwrap(), Contrastive { loss: 0.0, skipped: true });
        let bad = ContrastiveBatch { tau: 0.0, ..batch };
        assert!(matches!(latent_infonce(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn infonce_two_term_value() {
        // Two-term softmax: −log(σ((s⁺ − s⁻)/τ)) = log(1 + exp(−1.6)).
        let v = infonce_from_similarities(0.9, &[0.1], 0.5);
        assert!((v - (1.0 + (-1.6f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.183_900_740_888_338_9).abs() < 1e-12);
    }

    #[test]
    fn infonce_is_stable_at_extreme_temperatures() {
        let v = infonce_from_similarities(1.0, &[-1.0, 0.5], 1e-6);
        assert!(v.is_finite() && v >= 0.0);
        let v = infonce_from_similarities(-1.0, &[1.0], 1e-6);
        assert!((v - 2e6).abs() < 1.0);
    }

    #[test]
    fn combined_weights() {
        assert_eq!(combined_loss(1.0, 2.0, LossWeights::new(1.0).unwrap()), 1.0);
        assert_eq!(combined_loss(1.0, 2.0, LossWeights::new(0.0).unwrap()), 2.0);
        assert!((combined_loss(1.0, 2.0, LossWeights::default()) - 1.1).abs() < 1e-12);
        assert!(LossWeights::new(1.5).is_err());
    }

    #[test]
    fn graph_forms_match_plain_ones() {
        let (a, p, n) = (vec![0.3, -0.2, 0.9, 0.1], vec![0.2, -0.1, 1.0, 0.0], vec![-0.5, 0.4, 0.1, 0.3]);
        let mut g = Graph::<f64>::new();
        let to = |g: &mut Graph<f64>, v: &Vec<f64>| g.constant(crate::autodiff::Matrix::new(1, v.len(), v.clone()));
        let (va, vp, vn) = (to(&mut g, &a), to(&mut g, &p), to(&mut g, &n));
        let nce = infonce_graph(&mut g, va, vp, &[vn], 0.1).unwrap();
        let plain =
            latent_infonce(&ContrastiveBatch { anchor: block(a), positive: block(p), negatives: vec![block(n)], tau: 0.1 }).unwrap();
        assert!((g.item(nce) - plain.loss).abs() < 1e-12);
        let d = mse_graph(&mut g, va, vp);
        let c = combined_graph(&mut g, d, Some(nce), LossWeights::default());
        assert!((g.item(c) - combined_loss(g.item(d), plain.loss, LossWeights::default())).abs() < 1e-12);
    }

    #[test]
    fn probe_needs_enough_samples() {
        let pairs = SamplePairs { reference: vec![vec![0.0]; 10], predicted: vec![vec![0.0]; 10] };
        assert!(matches!(bootstrap_kl(&pairs, &KlProbeConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn identical_distributions_give_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let pairs = SamplePairs { reference: s.clone(), predicted: s };
        let (kl, var) = bootstrap_kl(&pairs, &KlProbeConfig::default()).unwrap();
        assert!(kl.abs() < 1e-12 && var < 1e-20);
    }
}
