//! Video autoencoder compressing `T×H×W×3` clips into `⌈T/4⌉×H/8×W/8×C` latents.
//!
//! The encoder is two strided 3D convolutions whose kernels equal their
//! strides, `(2,4,4)` then `(2,2,2)`, followed by a `1×1×1` projection to the
//! Gaussian mean and log-variance; the decoder mirrors it with transposed
//! convolutions. Because kernel equals stride, every latent position depends
//! only on its own `4×8×8` pixel block, so both directions are evaluated as
//! batched matrix products over blocks.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Matrix, Var};
use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{normal_matrix, Adam, Bound, Linear, Params};
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

/// Compressed `T′×H′×W′×C` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock<F> {
    pub data: Array4<F>,
    /// Frame count of the encoded clip, used to crop temporal padding.
    pub frames: usize,
}

impl<F: Real> LatentBlock<F> {
    pub fn new(data: Array4<F>, frames: usize) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("latent contains non-finite values".into()));
        }
        Ok(Self { data, frames })
    }

    pub fn zeros_like(&self) -> Self {
        Self { data: Array4::zeros(self.data.dim()), frames: self.frames }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        self.data.as_slice().expect("standard layout")
    }

    /// Same shape, new values.
    pub fn with_data(&self, values: Vec<F>) -> Self {
        let data = Array4::from_shape_vec(self.data.dim(), values).expect("length matches latent shape");
        Self { data, frames: self.frames }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { data: self.data.mapv(f), frames: self.frames }
    }
}

pub trait LatentCodec<F: Real> {
    fn latent_channels(&self) -> usize;
    /// Latent shape for a `frames×height×width` clip.
    fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)>;
    /// Deterministic encoding (the posterior mean).
    fn encode(&self, x: &FrameSequence<F>) -> Result<LatentBlock<F>>;
    fn decode(&self, z: &LatentBlock<F>) -> Result<FrameSequence<F>>;
    fn is_trained(&self) -> bool;

    fn encode_alpha(&self, m: &AlphaSequence<F>) -> Result<LatentBlock<F>> {
        self.encode(&m.to_rgb())
    }

    /// Decodes and reduces RGB to a matte by channel mean.
    fn decode_alpha(&self, z: &LatentBlock<F>) -> Result<AlphaSequence<F>> {
        Ok(AlphaSequence::from_rgb_mean(&self.decode(z)?))
    }
}

/// Passthrough codec with unit compression.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl<F: Real> LatentCodec<F> for IdentityCodec {
    fn latent_channels(&self) -> usize {
        3
    }

    fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        Ok((frames, height, width, 3))
    }

    fn encode(&self, x: &FrameSequence<F>) -> Result<LatentBlock<F>> {
        LatentBlock::new(x.array().clone(), x.dims().0)
    }

    fn decode(&self, z: &LatentBlock<F>) -> Result<FrameSequence<F>> {
        if z.shape().3 != 3 {
            return Err(Error::Shape(format!("identity codec expects 3 channels, got {}", z.shape().3)));
        }
        FrameSequence::clamped(z.data.clone())
    }

    fn is_trained(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub temporal: usize,
    pub spatial: usize,
    pub channels: usize,
    pub stage1_temporal: usize,
    pub stage1_spatial: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { temporal: 4, spatial: 8, channels: 16, stage1_temporal: 2, stage1_spatial: 4, hidden1: 32, hidden2: 128 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.temporal >= 1
            && self.spatial >= 1
            && self.channels >= 1
            && self.stage1_temporal >= 1
            && self.stage1_spatial >= 1
            && self.temporal.is_multiple_of(self.stage1_temporal)
            && self.spatial.is_multiple_of(self.stage1_spatial)
            && self.hidden1 >= 1
            && self.hidden2 >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid codec config {self:?}")))
        }
    }

    fn stage2(&self) -> (usize, usize) {
        (self.temporal / self.stage1_temporal, self.spatial / self.stage1_spatial)
    }

    /// Stage-1 sub-blocks per latent position.
    fn sub_blocks(&self) -> usize {
        let (t2, s2) = self.stage2();
        t2 * s2 * s2
    }

    /// Values per stage-1 sub-block.
    fn sub_block_len(&self) -> usize {
        self.stage1_temporal * self.stage1_spatial * self.stage1_spatial * 3
    }

    fn padded_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.temporal) * self.temporal
    }
}

/// Offset of `(t, y, x)` inside a latent block as (sub-block, position inside it).
fn block_offsets(cfg: &CodecConfig) -> Vec<(usize, usize, usize, usize, usize)> {
    let (t1, s1) = (cfg.stage1_temporal, cfg.stage1_spatial);
    let (_, s2) = cfg.stage2();
    let mut out = Vec::with_capacity(cfg.temporal * cfg.spatial * cfg.spatial);
    for dt in 0..cfg.temporal {
        for dy in 0..cfg.spatial {
            for dx in 0..cfg.spatial {
                let sub = ((dt / t1) * s2 + dy / s1) * s2 + dx / s1;
                let inner = ((dt % t1) * s1 + dy % s1) * s1 + dx % s1;
                out.push((dt, dy, dx, sub, inner));
            }
        }
    }
    out
}

/// Rearranges a padded clip into `(positions·sub_blocks) × sub_block_len` rows.
fn patchify<F: Real>(x: &Array4<F>, cfg: &CodecConfig) -> Matrix<F> {
    let (t, h, w, _) = x.dim();
    let (lt, lh, lw) = (t / cfg.temporal, h / cfg.spatial, w / cfg.spatial);
    let k2 = cfg.sub_blocks();
    let p1 = cfg.sub_block_len();
    let mut data = vec![F::zero(); lt * lh * lw * k2 * p1];
    let offsets = block_offsets(cfg);
    for bt in 0..lt {
        for by in 0..lh {
            for bx in 0..lw {
                let pos = (bt * lh + by) * lw + bx;
                for &(dt, dy, dx, sub, inner) in &offsets {
                    let row = pos * k2 + sub;
                    let (ft, fy, fx) = (bt * cfg.temporal + dt, by * cfg.spatial + dy, bx * cfg.spatial + dx);
                    for c in 0..3 {
                        data[row * p1 + inner * 3 + c] = x[[ft, fy, fx, c]];
                    }
                }
            }
        }
    }
    Matrix::new(lt * lh * lw * k2, p1, data)
}

fn unpatchify<F: Real>(m: &[F], cfg: &CodecConfig, t: usize, h: usize, w: usize) -> Array4<F> {
    let (lt, lh, lw) = (t / cfg.temporal, h / cfg.spatial, w / cfg.spatial);
    let k2 = cfg.sub_blocks();
    let p1 = cfg.sub_block_len();
    let mut out = Array4::zeros((t, h, w, 3));
    let offsets = block_offsets(cfg);
    for bt in 0..lt {
        for by in 0..lh {
            for bx in 0..lw {
                let pos = (bt * lh + by) * lw + bx;
                for &(dt, dy, dx, sub, inner) in &offsets {
                    let row = pos * k2 + sub;
                    for c in 0..3 {
                        out[[bt * cfg.temporal + dt, by * cfg.spatial + dy, bx * cfg.spatial + dx, c]] = m[row * p1 + inner * 3 + c];
                    }
                }
            }
        }
    }
    out
}

/// Replicates the final frame up to a multiple of the temporal factor.
fn pad_time<F: Real>(x: &Array4<F>, frames: usize) -> Array4<F> {
    let (t, h, w, c) = x.dim();
    Array4::from_shape_fn((frames, h, w, c), |(f, y, xx, ch)| x[[f.min(t - 1), y, xx, ch]])
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    enc1: Linear,
    enc2: Linear,
    enc_out: Linear,
    dec_in: Linear,
    dec2: Linear,
    dec_out: Linear,
}

/// Trainable convolutional codec.
#[derive(Debug, Clone)]
pub struct ConvCodec<F> {
    pub config: CodecConfig,
    pub params: Params<F>,
    layers: Layers,
    /// Optimizer steps taken; zero means untrained.
    pub trained_steps: u64,
}

impl<F: Real> ConvCodec<F> {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let k2 = config.sub_blocks();
        let p1 = config.sub_block_len();
        let (h1, h2, c) = (config.hidden1, config.hidden2, config.channels);
        let layers = Layers {
            enc1: Linear::new(&mut p, "enc1", p1, h1, &mut rng),
            enc2: Linear::new(&mut p, "enc2", k2 * h1, h2, &mut rng),
            enc_out: Linear::new(&mut p, "enc_out", h2, 2 * c, &mut rng),
            dec_in: Linear::new(&mut p, "dec_in", c, h2, &mut rng),
            dec2: Linear::new(&mut p, "dec2", h2, k2 * h1, &mut rng),
            dec_out: Linear::new(&mut p, "dec_out", h1, p1, &mut rng),
        };
        Ok(Self { config, params: p, layers, trained_steps: 0 })
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let s = self.config.spatial;
        if !h.is_multiple_of(s) || !w.is_multiple_of(s) || h == 0 || w == 0 {
            return Err(Error::Shape(format!("spatial dims {h}x{w} not divisible by {s}")));
        }
        Ok(())
    }

    /// Mean and log-variance, each `positions × C`.
    fn encode_graph(&self, g: &mut Graph<F>, b: &Bound, x: Var) -> (Var, Var) {
        let l = &self.layers;
        let rows = g.shape(x).0;
        let k2 = self.config.sub_blocks();
        let h = l.enc1.forward(g, b, x);
        let h = g.silu(h);
        let h = g.reshape(h, rows / k2, k2 * self.config.hidden1);
        let h = l.enc2.forward(g, b, h);
        let h = g.silu(h);
        let out = l.enc_out.forward(g, b, h);
        let c = self.config.channels;
        (g.slice_cols(out, 0, c), g.slice_cols(out, c, c))
    }

    /// Reconstruction in patch layout from `positions × C` latents.
    fn decode_graph(&self, g: &mut Graph<F>, b: &Bound, z: Var) -> Var {
        let l = &self.layers;
        let n = g.shape(z).0;
        let k2 = self.config.sub_blocks();
        let h = l.dec_in.forward(g, b, z);
        let h = g.silu(h);
        let h = l.dec2.forward(g, b, h);
        let h = g.silu(h);
        let h = g.reshape(h, n * k2, self.config.hidden1);
        let out = l.dec_out.forward(g, b, h);
        g.sigmoid(out)
    }

    /// SHA-256 over configuration and parameter bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, m) in self.params.iter() {
            hasher.update(name.as_bytes());
            for v in &m.data {
                hasher.update(v.f64().to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }

    /// Rebuilds the layer handles for loaded parameters.
    pub fn from_parts(config: CodecConfig, params: Vec<(String, Matrix<F>)>, trained_steps: u64) -> Result<Self> {
        let mut codec = Self::new(config, 0)?;
        codec.params.load(params)?;
        codec.trained_steps = trained_steps;
        Ok(codec)
    }

    /// Reconstruction loss (mean squared error plus weighted KL) for patch rows,
    /// returning `(graph, loss, recon)` with parameters bound for training.
    fn training_loss(&self, x: Matrix<F>, noise: Matrix<F>, kl_weight: f64) -> (Graph<F>, Bound, Var, F) {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.constant(x);
        let (mean, logvar) = self.encode_graph(&mut g, &b, xv);
        let half = g.scale(logvar, F::lit(0.5));
        let std = g.exp(half);
        let xi = g.constant(noise);
        let eps = g.mul(std, xi);
        let z = g.add(mean, eps);
        let recon = self.decode_graph(&mut g, &b, z);
        let diff = g.sub(recon, xv);
        let sq = g.square(diff);
        let rec = g.mean(sq);
        // KL(N(μ,σ²) ‖ N(0,1)) per element: ½(μ² + σ² − 1 − log σ²)
        let m2 = g.square(mean);
        let var = g.exp(logvar);
        let s = g.add(m2, var);
        let s = g.sub(s, logvar);
        let s = g.add_const(s, -F::one());
        let kl = g.mean(s);
        let kl = g.scale(kl, F::lit(0.5 * kl_weight));
        let loss = g.add(rec, kl);
        let rec_value = g.item(rec);
        (g, b, loss, rec_value)
    }
}

impl<F: Real> LatentCodec<F> for ConvCodec<F> {
    fn latent_channels(&self) -> usize {
        self.config.channels
    }

    fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        self.check_spatial(height, width)?;
        if frames == 0 {
            return Err(Error::Shape("clip has no frames".into()));
        }
        let c = &self.config;
        Ok((frames.div_ceil(c.temporal), height / c.spatial, width / c.spatial, c.channels))
    }

    fn encode(&self, x: &FrameSequence<F>) -> Result<LatentBlock<F>> {
        let (t, h, w) = x.dims();
        let shape = self.latent_shape(t, h, w)?;
        let padded = pad_time(x.array(), self.config.padded_frames(t));
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let xv = g.constant(patchify(&padded, &self.config));
        let (mean, _) = self.encode_graph(&mut g, &b, xv);
        let data = Array4::from_shape_vec(shape, g.value(mean).data.clone()).expect("latent shape");
        LatentBlock::new(data, t)
    }

    fn decode(&self, z: &LatentBlock<F>) -> Result<FrameSequence<F>> {
        let (lt, lh, lw, c) = z.shape();
        if c != self.config.channels {
            return Err(Error::Shape(format!("latent has {c} channels, codec expects {}", self.config.channels)));
        }
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let zv = g.constant(Matrix::new(lt * lh * lw, c, z.as_slice().to_vec()));
        let out = self.decode_graph(&mut g, &b, zv);
        let (t, h, w) = (lt * self.config.temporal, lh * self.config.spatial, lw * self.config.spatial);
        let full = unpatchify(&g.value(out).data, &self.config, t, h, w);
        let frames = z.frames.clamp(1, t);
        let cropped = full.slice(ndarray::s![..frames, .., .., ..]).to_owned();
        FrameSequence::clamped(cropped)
    }

    fn is_trained(&self) -> bool {
        self.trained_steps > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Latent blocks per optimizer step.
    pub blocks_per_step: usize,
    pub kl_weight: f64,
    pub seed: u64,
    /// Evaluate held-out loss every this many steps (0 disables).
    pub eval_every: usize,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, lr: 2e-3, blocks_per_step: 64, kl_weight: 1e-4, seed: 1, eval_every: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub heldout: Option<f64>,
}

/// Mean squared round-trip error of `codec` over `clips`.
pub fn reconstruction_mse<F: Real, C: LatentCodec<F>>(codec: &C, clips: &[FrameSequence<F>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for clip in clips {
        let back = codec.decode(&codec.encode(clip)?)?;
        for (a, b) in clip.array().iter().zip(back.array()) {
            let d = (*a - *b).f64();
            total += d * d;
        }
        count += clip.array().len();
    }
    Ok(total / count.max(1) as f64)
}

/// Stepwise codec optimization; each step draws its blocks from a stream keyed
/// by the step index, so a resumed run continues identically.
pub struct CodecTrainer<F> {
    pub codec: ConvCodec<F>,
    pub opt: Adam<F>,
    pub train: CodecTrainConfig,
    patches: Vec<Matrix<F>>,
}

impl<F: Real> CodecTrainer<F> {
    pub fn new(codec: ConvCodec<F>, opt: Option<Adam<F>>, clips: &[FrameSequence<F>], train: &CodecTrainConfig) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Input("codec training set is empty".into()));
        }
        if train.blocks_per_step == 0 || !(train.lr > 0.0) {
            return Err(Error::Config("codec training needs blocks_per_step >= 1 and lr > 0".into()));
        }
        let config = &codec.config;
        let patches = clips
            .iter()
            .map(|clip| {
                let (t, h, w) = clip.dims();
                codec.check_spatial(h, w)?;
                Ok(patchify(&pad_time(clip.array(), config.padded_frames(t)), config))
            })
            .collect::<Result<_>>()?;
        let opt = opt.unwrap_or_else(|| Adam::new(&codec.params, train.lr));
        Ok(Self { codec, opt, train: train.clone(), patches })
    }

    /// One optimizer step; returns `(loss, reconstruction)`.
    pub fn step(&mut self, step: usize) -> Result<(f64, f64)> {
        let config = &self.codec.config;
        let (k2, p1) = (config.sub_blocks(), config.sub_block_len());
        let block_len = k2 * p1;
        let n = self.train.blocks_per_step;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.train.seed, "codec-step", step as u64));
        let mut x = Vec::with_capacity(n * block_len);
        for _ in 0..n {
            let m = &self.patches[rng.random_range(0..self.patches.len())];
            let pos = rng.random_range(0..m.rows / k2);
            x.extend_from_slice(&m.data[pos * block_len..(pos + 1) * block_len]);
        }
        let x = Matrix::new(n * k2, p1, x);
        let noise = normal_matrix(n, config.channels, 1.0, &mut rng);
        let (g, b, loss, recon) = self.codec.training_loss(x, noise, self.train.kl_weight);
        let loss_value = g.item(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { step, what: "codec loss".into() });
        }
        let grads = g.backward(loss);
        let flat = self.codec.params.collect_grads(&b, &grads);
        self.opt.update(&mut self.codec.params, &flat);
        self.codec.trained_steps += 1;
        Ok((loss_value.f64(), recon.f64()))
    }
}

/// Trains a fresh codec on `clips`, reporting the loss curve.
pub fn train_codec<F: Real>(
    clips: &[FrameSequence<F>],
    heldout: &[FrameSequence<F>],
    config: &CodecConfig,
    train: &CodecTrainConfig,
) -> Result<(ConvCodec<F>, Vec<CurvePoint>)> {
    let codec = ConvCodec::new(config.clone(), train.seed)?;
    let mut trainer = CodecTrainer::new(codec, None, clips, train)?;
    let mut curve = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let (loss, recon) = trainer.step(step)?;
        let last = step + 1 == train.steps;
        let heldout_mse = if !heldout.is_empty() && ((train.eval_every > 0 && step % train.eval_every == 0) || last) {
            Some(reconstruction_mse(&trainer.codec, heldout)?)
        } else {
            None
        };
        curve.push(CurvePoint { step, loss, recon, heldout: heldout_mse });
    }
    Ok((trainer.codec, curve))
}

/// Estimates the attenuation factor `λ̂ = E‖D(E(M+ε)) − M‖² / ‖ε‖²`.
///
/// `ε` is i.i.d. Gaussian of scale `noise_scale`; the noisy matte is clipped to
/// `[0,1]` and `ε` denotes the perturbation that survives clipping.
pub fn noise_attenuation_probe<F: Real, C: LatentCodec<F>>(
    matte: &AlphaSequence<F>,
    noise_scale: f64,
    codec: &C,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !codec.is_trained() {
        return Err(Error::State("noise attenuation probe needs a trained codec".into()));
    }
    if !(noise_scale > 0.0) || trials == 0 {
        return Err(Error::Config(format!("noise_scale must be > 0 and trials >= 1 (got {noise_scale}, {trials})")));
    }
    let normal = Normal::new(0.0, noise_scale).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = matte.array();
    let mut total = 0.0;
    for _ in 0..trials {
        let noisy = clean.mapv(|v| F::lit((v.f64() + normal.sample(&mut rng)).clamp(0.0, 1.0)));
        let noise_energy: f64 = noisy.iter().zip(clean).map(|(a, b)| (*a - *b).f64().powi(2)).sum();
        let noisy = AlphaSequence::new(noisy)?;
        let back = codec.decode_alpha(&codec.encode_alpha(&noisy)?)?;
        let err: f64 = back.array().iter().zip(clean).map(|(a, b)| (*a - *b).f64().powi(2)).sum();
        if noise_energy > 0.0 {
            total += err / noise_energy;
        }
    }
    Ok(total / trials as f64)
}

/// Standard normal sample with the given latent shape.
pub fn standard_normal_latent<F: Real, R: Rng + ?Sized>(shape: (usize, usize, usize, usize), frames: usize, rng: &mut R) -> LatentBlock<F> {
    let data = Array4::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        F::lit(z)
    });
    LatentBlock { data, frames }
}
