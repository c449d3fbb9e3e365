//! Noise schedule, forward corruption, noise predictor and the reverse sampler.

mod denoiser;
mod schedule;

pub use denoiser::{denoise_step_predict, Denoiser, DenoiserConfig, DiffusionInput, DENOISER_VERSION};
pub use schedule::{forward_sample, from_alpha_bar, make_schedule, reverse_step, NoiseSchedule, ScheduleKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{standard_normal_latent, LatentBlock, LatentCodec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};
use crate::text::{EncoderRegistry, TextEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub t_diff: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Strided steps used at inference.
    pub sample_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Linear, t_diff: 1000, beta_min: 1e-4, beta_max: 0.02, sample_steps: 50 }
    }
}

impl ScheduleConfig {
    /// Training schedule.
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_diff, self.kind, self.beta_min, self.beta_max)
    }

    /// Respaced inference schedule.
    pub fn sampler(&self) -> Result<NoiseSchedule> {
        self.build()?.respace(self.sample_steps)
    }
}

/// Per-channel affine maps `(z − shift)·scale` bringing codec latents to unit scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub video_shift: Vec<f64>,
    pub video_scale: Vec<f64>,
    pub matte_shift: Vec<f64>,
    pub matte_scale: Vec<f64>,
    /// Bound on normalized matte latents; the sampler clips `x̂₀` to it.
    #[serde(default)]
    pub matte_clip: Option<f64>,
}

/// Per-channel mean and inverse standard deviation.
fn moments<F: Real>(blocks: &[LatentBlock<F>]) -> (Vec<f64>, Vec<f64>) {
    let Some(c) = blocks.first().map(|b| b.shape().3) else {
        return (Vec::new(), Vec::new());
    };
    let (mut sum, mut sq, mut n) = (vec![0.0; c], vec![0.0; c], 0usize);
    for b in blocks {
        for px in b.as_slice().chunks(c) {
            for (k, v) in px.iter().enumerate() {
                sum[k] += v.f64();
                sq[k] += v.f64() * v.f64();
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let std = (q / n - m * m).max(0.0).sqrt();
            if std > 1e-8 {
                1.0 / std
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn affine<F: Real>(z: &LatentBlock<F>, shift: &[f64], scale: &[f64], inverse: bool) -> LatentBlock<F> {
    if shift.is_empty() {
        return z.clone();
    }
    let c = shift.len();
    let values = z
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (s, k) = (shift[i % c], scale[i % c]);
            F::lit(if inverse { v.f64() / k + s } else { (v.f64() - s) * k })
        })
        .collect();
    z.with_data(values)
}

impl LatentNorm {
    /// Per-kind, per-channel statistics over all latent positions; an empty
    /// fit is the identity.
    pub fn fit<F: Real>(videos: &[LatentBlock<F>], mattes: &[LatentBlock<F>]) -> Self {
        let (video_shift, video_scale) = moments(videos);
        let (matte_shift, matte_scale) = moments(mattes);
        let mut norm = Self { video_shift, video_scale, matte_shift, matte_scale, matte_clip: None };
        let bound = mattes.iter().flat_map(|z| norm.matte(z).as_slice().to_vec()).map(|v| v.f64().abs()).fold(0.0, f64::max);
        norm.matte_clip = (bound > 0.0).then_some(bound);
        norm
    }

    /// Rejects a fit whose channel count differs from `channels`.
    pub fn check(&self, channels: usize) -> Result<()> {
        let lens = [self.video_shift.len(), self.video_scale.len(), self.matte_shift.len(), self.matte_scale.len()];
        if lens.iter().all(|&l| l == 0 || l == channels) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("latent normalization has {lens:?} channels, expected {channels}")))
        }
    }

    pub fn video<F: Real>(&self, z: &LatentBlock<F>) -> LatentBlock<F> {
        affine(z, &self.video_shift, &self.video_scale, false)
    }

    pub fn matte<F: Real>(&self, z: &LatentBlock<F>) -> LatentBlock<F> {
        affine(z, &self.matte_shift, &self.matte_scale, false)
    }

    pub fn matte_inverse<F: Real>(&self, z: &LatentBlock<F>) -> LatentBlock<F> {
        affine(z, &self.matte_shift, &self.matte_scale, true)
    }
}

/// Noise consistent with `x_t` and the clipped estimate `x̂₀ = (x_t − √(1−ᾱ)ε̂)/√ᾱ`.
pub fn clip_prediction<F: Real>(x_t: &LatentBlock<F>, eps_hat: &LatentBlock<F>, alpha_bar: f64, clip: f64) -> LatentBlock<F> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let values = x_t
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .map(|(&x, &e)| {
            let x0 = ((x.f64() - b * e.f64()) / a).clamp(-clip, clip);
            F::lit((x.f64() - a * x0) / b)
        })
        .collect();
    x_t.with_data(values)
}

/// Runs the reverse chain over `s` from a standard normal draw and returns the
/// final normalized matte latent.
pub fn sample_latent<F: Real>(
    z_video: &LatentBlock<F>,
    text: &TextEmbedding<F>,
    w: &Denoiser<F>,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<LatentBlock<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal_latent(z_video.shape(), z_video.frames, &mut rng);
    for i in (1..=s.len()).rev() {
        let input = DiffusionInput { z_video, z_noise: &x, t: s.timesteps[i - 1], text };
        let mut eps = w.predict(&input)?;
        if let Some(c) = w.norm.matte_clip {
            eps = clip_prediction(&x, &eps, s.alpha_bar[i - 1], c);
        }
        x = reverse_step(&x, i, &eps, s, &mut rng)?;
    }
    Ok(x)
}

/// Generates the matte of the instance `caption` refers to in `video`.
pub fn sample_matte<F: Real, C: LatentCodec<F>>(
    video: &FrameSequence<F>,
    caption: &str,
    w: &Denoiser<F>,
    codec: &C,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<AlphaSequence<F>> {
    sample_matte_with(&EncoderRegistry::default(), video, caption, w, codec, s, seed)
}

/// [`sample_matte`] with an explicit text-encoder registry.
pub fn sample_matte_with<F: Real, C: LatentCodec<F>>(
    registry: &EncoderRegistry,
    video: &FrameSequence<F>,
    caption: &str,
    w: &Denoiser<F>,
    codec: &C,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<AlphaSequence<F>> {
    if !codec.is_trained() {
        return Err(Error::State("sampling needs a trained codec".into()));
    }
    let text = registry.encode_text(caption, &w.config.text)?;
    let z_video = w.norm.video(&codec.encode(video)?);
    let z = sample_latent(&z_video, &text, w, s, seed)?;
    let matte = codec.decode_alpha(&w.norm.matte_inverse(&z))?;
    let (t, h, ww) = video.dims();
    if matte.dims() != (t, h, ww) {
        return Err(Error::Shape(format!("decoded matte {:?} does not match video {:?}", matte.dims(), (t, h, ww))));
    }
    Ok(matte)
}
