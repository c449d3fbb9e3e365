//! Transformer noise predictor over `1×p×p` patches of the channel-concatenated
//! `[z_video ‖ z_noise]` latent, with caption tokens prepended once at the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Matrix, Var};
use crate::codec::LatentBlock;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal, Bound, LayerNorm, Linear, Params};
use crate::scalar::Real;
use crate::text::{TextConfig, TextEmbedding};

use super::LatentNorm;

pub const DENOISER_VERSION: &str = "denoiser-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Spatial patch side in latent cells.
    pub patch: usize,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub text: TextConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: 16, patch: 2, d_model: 64, depth: 2, heads: 4, mlp_ratio: 4, text: TextConfig::default() }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.d_model;
        if self.latent_channels == 0
            || self.patch == 0
            || d == 0
            || !d.is_multiple_of(8)
            || self.heads == 0
            || !d.is_multiple_of(self.heads)
            || self.mlp_ratio == 0
        {
            return Err(Error::Config(format!("invalid denoiser config {self:?}")));
        }
        if self.text.slots == 0 || self.text.dim == 0 {
            return Err(Error::Config("text slots and dim must be positive".into()));
        }
        Ok(())
    }

    /// Denoiser input channels: video and noise latents side by side.
    pub fn input_channels(&self) -> usize {
        2 * self.latent_channels
    }
}

/// Inputs of one noise prediction. `t` is a step of the base schedule.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionInput<'a, F> {
    pub z_video: &'a LatentBlock<F>,
    pub z_noise: &'a LatentBlock<F>,
    pub t: usize,
    pub text: &'a TextEmbedding<F>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Layers {
    embed: Linear,
    time1: Linear,
    time2: Linear,
    text: Linear,
    text_pool: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    head: Linear,
}

/// Weights of `ε_θ` together with the latent normalization they were trained under.
#[derive(Debug, Clone)]
pub struct Denoiser<F> {
    pub config: DenoiserConfig,
    pub params: Params<F>,
    pub norm: LatentNorm,
    layers: Layers,
}

/// Splits `(T′,H′,W′,C)` into tokens of `p×p` cells, features ordered `(dy, dx, c)`.
fn tokens_of<F: Real>(parts: &[&LatentBlock<F>], p: usize) -> Matrix<F> {
    let (lt, lh, lw, c) = parts[0].shape();
    let width: usize = parts.len() * c;
    let n = lt * (lh / p) * (lw / p);
    let mut data = Vec::with_capacity(n * p * p * width);
    for t in 0..lt {
        for by in 0..lh / p {
            for bx in 0..lw / p {
                for dy in 0..p {
                    for dx in 0..p {
                        for z in parts {
                            for ch in 0..c {
                                data.push(z.data[[t, by * p + dy, bx * p + dx, ch]]);
                            }
                        }
                    }
                }
            }
        }
    }
    Matrix::new(n, p * p * width, data)
}

fn untokens<F: Real>(m: &[F], like: &LatentBlock<F>, p: usize) -> LatentBlock<F> {
    let (lt, lh, lw, c) = like.shape();
    let mut out = like.zeros_like();
    let mut i = 0;
    for t in 0..lt {
        for by in 0..lh / p {
            for bx in 0..lw / p {
                for dy in 0..p {
                    for dx in 0..p {
                        for ch in 0..c {
                            out.data[[t, by * p + dy, bx * p + dx, ch]] = m[i];
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fixed sinusoidal code of each token's `(t, y, x)` grid position.
fn positions<F: Real>(lt: usize, gh: usize, gw: usize, d: usize) -> Matrix<F> {
    let dt = (d / 4) & !1;
    let dy = ((d - dt) / 2) & !1;
    let dx = d - dt - dy;
    let mut data = Vec::with_capacity(lt * gh * gw * d);
    for t in 0..lt {
        for y in 0..gh {
            for x in 0..gw {
                data.extend(sinusoidal::<F>(t as f64, dt));
                data.extend(sinusoidal::<F>(y as f64, dy));
                data.extend(sinusoidal::<F>(x as f64, dx));
            }
        }
    }
    Matrix::new(lt * gh * gw, d, data)
}

impl<F: Real> Denoiser<F> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let d = config.d_model;
        let c = config.latent_channels;
        let cells = config.patch * config.patch;
        let embed = Linear::new(&mut p, "embed", cells * 2 * c, d, &mut rng);
        // Video and noise channel rows start from the same draw.
        {
            let w = p.get_mut(embed.w);
            for cell in 0..cells {
                for ch in 0..c {
                    let src = (cell * 2 * c + ch) * d;
                    let dst = (cell * 2 * c + c + ch) * d;
                    let row: Vec<F> = w.data[src..src + d].to_vec();
                    w.data[dst..dst + d].copy_from_slice(&row);
                }
            }
        }
        let time1 = Linear::new(&mut p, "time1", d, d, &mut rng);
        let time2 = Linear::new(&mut p, "time2", d, d, &mut rng);
        let text = Linear::new(&mut p, "text", config.text.dim, d, &mut rng);
        let text_pool = Linear::new(&mut p, "text_pool", config.text.dim, d, &mut rng);
        let blocks = (0..config.depth)
            .map(|i| Block {
                ln1: LayerNorm::new(&mut p, &format!("block{i}.ln1"), d),
                q: Linear::new(&mut p, &format!("block{i}.q"), d, d, &mut rng),
                k: Linear::new(&mut p, &format!("block{i}.k"), d, d, &mut rng),
                v: Linear::new(&mut p, &format!("block{i}.v"), d, d, &mut rng),
                o: Linear::new(&mut p, &format!("block{i}.o"), d, d, &mut rng),
                ln2: LayerNorm::new(&mut p, &format!("block{i}.ln2"), d),
                fc1: Linear::new(&mut p, &format!("block{i}.fc1"), d, config.mlp_ratio * d, &mut rng),
                fc2: Linear::new(&mut p, &format!("block{i}.fc2"), config.mlp_ratio * d, d, &mut rng),
            })
            .collect();
        let ln_out = LayerNorm::new(&mut p, "ln_out", d);
        let head = Linear::zeros(&mut p, "head", d, cells * c);
        let layers = Layers { embed, time1, time2, text, text_pool, blocks, ln_out, head };
        Ok(Self { config, params: p, norm: LatentNorm::default(), layers })
    }

    pub fn from_parts(config: DenoiserConfig, norm: LatentNorm, params: Vec<(String, Matrix<F>)>) -> Result<Self> {
        let mut d = Self::new(config, 0)?;
        d.params.load(params)?;
        norm.check(d.config.latent_channels)?;
        d.norm = norm;
        Ok(d)
    }

    pub fn check_input(&self, input: &DiffusionInput<'_, F>) -> Result<()> {
        let (v, n) = (input.z_video.shape(), input.z_noise.shape());
        if v != n {
            return Err(Error::Shape(format!("conditioning latent {v:?} does not match noise latent {n:?}")));
        }
        let p = self.config.patch;
        if n.3 != self.config.latent_channels || n.1 % p != 0 || n.2 % p != 0 {
            return Err(Error::Shape(format!("latent {n:?} incompatible with {} channels and patch {p}", self.config.latent_channels)));
        }
        let text = &input.text.tokens;
        if text.cols != self.config.text.dim || text.rows != input.text.mask.len() {
            return Err(Error::Shape(format!("text embedding is {}x{}, expected width {}", text.rows, text.cols, self.config.text.dim)));
        }
        Ok(())
    }

    fn attention(&self, g: &mut Graph<F>, b: &Bound, blk: &Block, x: Var) -> Var {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let q = blk.q.forward(g, b, x);
        let k = blk.k.forward(g, b, x);
        let v = blk.v.forward(g, b, x);
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let s = g.matmul_t(qh, kh);
                let s = g.scale(s, scale);
                let a = g.softmax(s);
                g.matmul(a, vh)
            })
            .collect();
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        blk.o.forward(g, b, cat)
    }

    /// Noise prediction in token layout, `tokens × p²C`.
    pub fn forward(&self, g: &mut Graph<F>, b: &Bound, input: &DiffusionInput<'_, F>) -> Result<Var> {
        self.check_input(input)?;
        let l = &self.layers;
        let p = self.config.patch;
        let d = self.config.d_model;
        let (lt, lh, lw, _) = input.z_noise.shape();
        let x = g.constant(tokens_of(&[input.z_video, input.z_noise], p));
        let x = l.embed.forward(g, b, x);
        let pos = g.constant(positions(lt, lh / p, lw / p, d));
        let x = g.add(x, pos);
        let temb = g.constant(Matrix::new(1, d, sinusoidal(input.t as f64, d)));
        let temb = l.time1.forward(g, b, temb);
        let temb = g.silu(temb);
        let mut cond = l.time2.forward(g, b, temb);
        let text = input.text.valid_tokens();
        let n_text = text.rows;
        if n_text > 0 {
            // Mean of the valid caption tokens joins the global conditioning.
            let mut pooled = vec![F::zero(); text.cols];
            for r in 0..n_text {
                for (acc, &v) in pooled.iter_mut().zip(text.row(r)) {
                    *acc += v / F::lit(n_text as f64);
                }
            }
            let pooled = g.constant(Matrix::new(1, text.cols, pooled));
            let pooled = l.text_pool.forward(g, b, pooled);
            cond = g.add(cond, pooled);
        }
        let x = g.add_row(x, cond);
        let n_latent = g.shape(x).0;
        let mut x = if n_text > 0 {
            let t = g.constant(text);
            let t = l.text.forward(g, b, t);
            g.concat_rows(&[t, x])
        } else {
            x
        };
        for blk in &l.blocks {
            let h = blk.ln1.forward(g, b, x);
            let h = self.attention(g, b, blk, h);
            x = g.add(x, h);
            let h = blk.ln2.forward(g, b, x);
            let h = blk.fc1.forward(g, b, h);
            let h = g.silu(h);
            let h = blk.fc2.forward(g, b, h);
            x = g.add(x, h);
        }
        let x = if n_text > 0 { g.slice_rows(x, n_text, n_latent) } else { x };
        let x = l.ln_out.forward(g, b, x);
        Ok(l.head.forward(g, b, x))
    }

    /// Token-layout target for the noise latent, matching [`Denoiser::forward`].
    pub fn tokens(&self, z: &LatentBlock<F>) -> Matrix<F> {
        tokens_of(&[z], self.config.patch)
    }

    /// Rebuilds a latent from token-layout values.
    pub fn untokens(&self, values: &[F], like: &LatentBlock<F>) -> LatentBlock<F> {
        untokens(values, like, self.config.patch)
    }

    /// `ε̂` with `z_noise`'s shape.
    pub fn predict(&self, input: &DiffusionInput<'_, F>) -> Result<LatentBlock<F>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &b, input)?;
        Ok(untokens(&g.value(out).data, input.z_noise, self.config.patch))
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(DENOISER_VERSION.as_bytes());
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, m) in self.params.iter() {
            hasher.update(name.as_bytes());
            for v in &m.data {
                hasher.update(v.f64().to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Predicts the injected noise for one reverse step.
pub fn denoise_step_predict<F: Real>(input: &DiffusionInput<'_, F>, w: &Denoiser<F>) -> Result<LatentBlock<F>> {
    w.predict(input)
}
