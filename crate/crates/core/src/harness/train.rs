use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix};
use crate::checkpoint::{Checkpoint, CheckpointKind, CODEC_PREFIX, DENOISER_PREFIX};
use crate::codec::{reconstruction_mse, standard_normal_latent, CodecTrainer, ConvCodec, LatentBlock, LatentCodec};
use crate::dataset::{derive_seed, load_sample, read_manifest, LoadedSample, Split, MANIFEST_FILE};
use crate::diffusion::{forward_sample, Denoiser, DiffusionInput, LatentNorm, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::objectives::{combined_graph, infonce_graph, mse_graph, LossWeights};
use crate::scalar::Real;
use crate::seq::FrameSequence;
use crate::text::{EncoderRegistry, TextEmbedding};

use super::config::RunConfig;

/// Line-delimited JSON log.
pub struct JsonlLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonlLog {
    /// Truncates unless `append` is set.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).map_err(Error::io(path))?;
        Ok(Self { out: BufWriter::new(file), path: path.to_path_buf() })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}").map_err(Error::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

pub fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Samples of one split, in manifest order.
pub fn load_split<F: Real>(data_root: &Path, split: Split) -> Result<Vec<LoadedSample<F>>> {
    let manifest = data_root.join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(Error::Input(format!("no dataset at {} (run `synth` first)", data_root.display())));
    }
    read_manifest(&manifest)?.into_iter().filter(|r| r.split == split).map(|r| load_sample(data_root, &r.sample_id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecLog {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLog {
    pub step: usize,
    pub loss: f64,
    pub l_diff: f64,
    /// Mean over batch items with negatives; 0 when all were skipped.
    pub l_nce: f64,
    pub lambda1: f64,
    /// Every item in the batch skipped the contrastive term.
    pub skip_flag: bool,
    pub skipped: usize,
    pub t: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub checkpoint: PathBuf,
    pub start_step: usize,
    pub end_step: usize,
    pub last_loss: Option<f64>,
}

fn checkpoint_due(cfg: &RunConfig, done: usize) -> bool {
    cfg.train.checkpoint_every > 0 && done.is_multiple_of(cfg.train.checkpoint_every)
}

/// Trains (or resumes) the codec on training composites and mattes.
pub fn train_codec_stage<F: Real>(cfg: &RunConfig, resume: Option<&Path>, progress: &mut dyn FnMut(&CodecLog)) -> Result<StageSummary> {
    cfg.validate()?;
    cfg.prepare_run_dir()?;
    let digest = cfg.digest()?;
    let train = load_split::<F>(&cfg.paths.data_root, Split::Train)?;
    let val = load_split::<F>(&cfg.paths.data_root, Split::Val)?;
    let mut clips: Vec<FrameSequence<F>> = Vec::new();
    for s in &train {
        clips.push(s.composite.clone());
        clips.extend(s.instances.iter().map(|(_, _, m)| m.to_rgb()));
    }
    let heldout: Vec<FrameSequence<F>> = val.iter().flat_map(|s| s.instances.iter().map(|(_, _, m)| m.to_rgb())).take(4).collect();
    let (codec, opt, start) = match resume {
        Some(path) => {
            let ck = Checkpoint::<F>::load(path)?;
            if ck.header.kind != CheckpointKind::Codec {
                return Err(Error::Checkpoint(format!("{} is not a codec checkpoint", path.display())));
            }
            let codec = ck.codec()?;
            let opt = ck.optimizer(CODEC_PREFIX, &codec.params, cfg.codec_train.lr)?;
            (codec, opt, ck.header.step as usize)
        }
        None => (ConvCodec::new(cfg.codec.clone(), cfg.codec_train.seed)?, None, 0),
    };
    let mut trainer = CodecTrainer::new(codec, opt, &clips, &cfg.codec_train)?;
    let mut log = JsonlLog::open(&cfg.log_path("codec"), resume.is_some())?;
    let path = cfg.codec_checkpoint();
    let save = |t: &CodecTrainer<F>, done: usize, heldout_mse: Option<f64>| -> Result<()> {
        let mut ck = Checkpoint::for_codec(&t.codec, done as u64, &digest).with_optimizer(CODEC_PREFIX, &t.codec.params, &t.opt);
        if let Some(h) = heldout_mse {
            ck.header.metrics.insert("heldout_mse".into(), h);
        }
        ck.save(&path)
    };
    let mut last = None;
    let steps = cfg.codec_train.steps;
    for step in start..steps {
        let (loss, recon) = trainer.step(step)?;
        let done = step + 1;
        let eval = cfg.codec_train.eval_every > 0 && (done % cfg.codec_train.eval_every == 0 || done == steps);
        let heldout_mse = if eval && !heldout.is_empty() { Some(reconstruction_mse(&trainer.codec, &heldout)?) } else { None };
        let record = CodecLog { step: done, loss, recon, heldout: heldout_mse };
        log.write(&record)?;
        progress(&record);
        last = Some(loss);
        if checkpoint_due(cfg, done) && done != steps {
            log.flush()?;
            save(&trainer, done, heldout_mse)?;
        }
    }
    log.flush()?;
    let final_heldout = if heldout.is_empty() { None } else { Some(reconstruction_mse(&trainer.codec, &heldout)?) };
    save(&trainer, steps.max(start), final_heldout)?;
    Ok(StageSummary { checkpoint: path, start_step: start, end_step: steps.max(start), last_loss: last })
}

/// Frozen-codec latents of the training set in normalized, token layout.
struct Prepared<F> {
    video: Vec<LatentBlock<F>>,
    mattes: Vec<Vec<LatentBlock<F>>>,
    matte_tokens: Vec<Vec<Matrix<F>>>,
    texts: Vec<Vec<TextEmbedding<F>>>,
    items: Vec<(usize, usize)>,
}

/// Video latents and, per sample, one latent per instance matte.
type EncodedSet<F> = (Vec<LatentBlock<F>>, Vec<Vec<LatentBlock<F>>>);

fn encode_training_set<F: Real>(samples: &[LoadedSample<F>], codec: &ConvCodec<F>) -> Result<EncodedSet<F>> {
    let video = samples.iter().map(|s| codec.encode(&s.composite)).collect::<Result<Vec<_>>>()?;
    let mattes = samples
        .iter()
        .map(|s| s.instances.iter().map(|(_, _, m)| codec.encode_alpha(m)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((video, mattes))
}

/// Stepwise diffusion optimization with a frozen codec.
pub struct DiffusionTrainer<F> {
    pub denoiser: Denoiser<F>,
    pub opt: Adam<F>,
    schedule: NoiseSchedule,
    weights: LossWeights,
    tau: f64,
    batch_size: usize,
    train: super::config::TrainConfig,
    seed: u64,
    data: Prepared<F>,
}

impl<F: Real> DiffusionTrainer<F> {
    /// Fits the latent normalization when `denoiser` has none yet (`fit_norm`).
    pub fn new(
        cfg: &RunConfig,
        codec: &ConvCodec<F>,
        mut denoiser: Denoiser<F>,
        opt: Option<Adam<F>>,
        samples: &[LoadedSample<F>],
        fit_norm: bool,
    ) -> Result<Self> {
        if !codec.is_trained() {
            return Err(Error::State("diffusion training needs a trained codec".into()));
        }
        if samples.is_empty() {
            return Err(Error::Input("diffusion training set is empty".into()));
        }
        let (video, mattes) = encode_training_set(samples, codec)?;
        if fit_norm {
            let flat: Vec<LatentBlock<F>> = mattes.iter().flatten().cloned().collect();
            denoiser.norm = LatentNorm::fit(&video, &flat);
        }
        let norm = denoiser.norm.clone();
        let video: Vec<_> = video.iter().map(|z| norm.video(z)).collect();
        let mattes: Vec<Vec<_>> = mattes.iter().map(|ms| ms.iter().map(|z| norm.matte(z)).collect()).collect();
        let matte_tokens = mattes.iter().map(|ms| ms.iter().map(|z| denoiser.tokens(z)).collect()).collect();
        let registry = EncoderRegistry::default();
        registry.check(&denoiser.config.text)?;
        let texts = samples
            .iter()
            .map(|s| s.instances.iter().map(|(_, c, _)| registry.encode_text(c, &denoiser.config.text)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let items = samples.iter().enumerate().flat_map(|(i, s)| (0..s.instances.len()).map(move |j| (i, j))).collect::<Vec<_>>();
        if items.is_empty() {
            return Err(Error::Input("training samples contain no instances".into()));
        }
        let opt = opt.unwrap_or_else(|| Adam::new(&denoiser.params, cfg.train.lr));
        Ok(Self {
            denoiser,
            opt,
            schedule: cfg.schedule.build()?,
            weights: cfg.loss.weights()?,
            tau: cfg.loss.tau,
            batch_size: cfg.train.batch_size,
            train: cfg.train.clone(),
            seed: cfg.diffusion_seed(),
            data: Prepared { video, mattes, matte_tokens, texts, items },
        })
    }

    /// One optimizer step over `batch_size` (sample, instance) draws.
    pub fn step(&mut self, step: usize) -> Result<DiffusionLog> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "diffusion-step", step as u64));
        let d = &self.denoiser;
        let data = &self.data;
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let mut total = None;
        let (mut sum_diff, mut sum_nce, mut skipped, mut ts) = (0.0, 0.0, 0usize, Vec::new());
        for _ in 0..self.batch_size {
            let (s, i) = data.items[rng.random_range(0..data.items.len())];
            let x0 = &data.mattes[s][i];
            let t = rng.random_range(1..=self.schedule.len());
            let eps = standard_normal_latent(x0.shape(), x0.frames, &mut rng);
            let x_t = forward_sample(x0, t, &eps, &self.schedule)?;
            let input = DiffusionInput { z_video: &data.video[s], z_noise: &x_t, t, text: &data.texts[s][i] };
            let eps_hat = d.forward(&mut g, &b, &input)?;
            let target = g.constant(d.tokens(&eps));
            let l_diff = mse_graph(&mut g, eps_hat, target);
            let siblings: Vec<usize> = (0..data.mattes[s].len()).filter(|&k| k != i).collect();
            let l_nce = if self.weights.lambda1 < 1.0 && !siblings.is_empty() {
                let ab = self.schedule.alpha_bar[t - 1];
                let xt = g.constant(d.tokens(&x_t));
                let scaled = g.scale(eps_hat, F::lit(-(1.0 - ab).sqrt()));
                let anchor = g.add(xt, scaled);
                let anchor = g.scale(anchor, F::lit(1.0 / ab.sqrt()));
                let pos = g.constant(data.matte_tokens[s][i].clone());
                let negs: Vec<_> = siblings.iter().map(|&k| g.constant(data.matte_tokens[s][k].clone())).collect();
                infonce_graph(&mut g, anchor, pos, &negs, self.tau)
            } else {
                None
            };
            sum_diff += g.item(l_diff).f64();
            match l_nce {
                Some(n) => sum_nce += g.item(n).f64(),
                None => skipped += 1,
            }
            ts.push(t);
            let item = combined_graph(&mut g, l_diff, l_nce, self.weights);
            total = Some(match total {
                Some(acc) => g.add(acc, item),
                None => item,
            });
        }
        let total = total.expect("batch_size >= 1");
        let loss = g.scale(total, F::lit(1.0 / self.batch_size as f64));
        let loss_value = g.item(loss).f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { step: step + 1, what: "diffusion loss".into() });
        }
        let grads = g.backward(loss);
        let flat = d.params.collect_grads(&b, &grads);
        self.opt.lr = self.train.lr_at(step);
        self.opt.update(&mut self.denoiser.params, &flat);
        let n = self.batch_size;
        let used = n - skipped;
        Ok(DiffusionLog {
            step: step + 1,
            loss: loss_value,
            l_diff: sum_diff / n as f64,
            l_nce: if used > 0 { sum_nce / used as f64 } else { 0.0 },
            lambda1: self.weights.lambda1,
            skip_flag: used == 0,
            skipped,
            t: ts,
        })
    }
}

/// Trains (or resumes) the denoiser against the frozen codec checkpoint.
pub fn train_diffusion_stage<F: Real>(
    cfg: &RunConfig,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(&DiffusionLog),
) -> Result<StageSummary> {
    cfg.validate()?;
    let (codec, denoiser, opt, start, fit) = match resume {
        Some(path) => {
            let ck = Checkpoint::<F>::load(path)?;
            if ck.header.kind != CheckpointKind::Diffusion {
                return Err(Error::Checkpoint(format!("{} is not a diffusion checkpoint", path.display())));
            }
            let denoiser = ck.denoiser()?;
            let opt = ck.optimizer(DENOISER_PREFIX, &denoiser.params, cfg.train.lr)?;
            (ck.codec()?, denoiser, opt, ck.header.step as usize, false)
        }
        None => {
            let path = cfg.codec_checkpoint();
            if !path.exists() {
                return Err(Error::State(format!("codec checkpoint {} not found (train the codec stage first)", path.display())));
            }
            let codec = Checkpoint::<F>::load(&path)?.codec()?;
            let denoiser = Denoiser::new(cfg.denoiser.clone(), derive_seed(cfg.seed, "denoiser-init", 0))?;
            (codec, denoiser, None, 0, true)
        }
    };
    cfg.prepare_run_dir()?;
    let digest = cfg.digest()?;
    let samples = load_split::<F>(&cfg.paths.data_root, Split::Train)?;
    let mut trainer = DiffusionTrainer::new(cfg, &codec, denoiser, opt, &samples, fit)?;
    let mut log = JsonlLog::open(&cfg.log_path("diffusion"), resume.is_some())?;
    let path = cfg.diffusion_checkpoint();
    let save = |t: &DiffusionTrainer<F>, done: usize, last: Option<f64>| -> Result<()> {
        let mut ck = Checkpoint::for_diffusion(&codec, &t.denoiser, &cfg.schedule, done as u64, &digest).with_optimizer(
            DENOISER_PREFIX,
            &t.denoiser.params,
            &t.opt,
        );
        if let Some(l) = last {
            ck.header.metrics.insert("l_diff".into(), l);
        }
        ck.save(&path)
    };
    let mut last = None;
    let steps = cfg.train.steps;
    for step in start..steps {
        let record = trainer.step(step)?;
        log.write(&record)?;
        progress(&record);
        last = Some(record.l_diff);
        let done = step + 1;
        if checkpoint_due(cfg, done) && done != steps {
            log.flush()?;
            save(&trainer, done, last)?;
        }
    }
    log.flush()?;
    save(&trainer, steps.max(start), last)?;
    Ok(StageSummary { checkpoint: path, start_step: start, end_step: steps.max(start), last_loss: last })
}
