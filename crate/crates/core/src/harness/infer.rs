use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Zip;

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::codec::ConvCodec;
use crate::dataset::{derive_seed, read_manifest, Split, CAPTIONS_FILE, MANIFEST_FILE};
use crate::diffusion::{sample_matte, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

use super::train::load_split;

/// Frozen models restored from a diffusion checkpoint.
pub struct Pipeline<F> {
    pub codec: ConvCodec<F>,
    pub denoiser: Denoiser<F>,
    pub sampler: NoiseSchedule,
    pub step: u64,
}

impl<F: Real> Pipeline<F> {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::<F>::load(path)?;
        if ck.header.kind != CheckpointKind::Diffusion {
            return Err(Error::Checkpoint(format!("{} is not a diffusion checkpoint", path.display())));
        }
        Ok(Self { codec: ck.codec()?, denoiser: ck.denoiser()?, sampler: ck.schedule()?.sampler()?, step: ck.header.step })
    }

    pub fn matte(&self, video: &FrameSequence<F>, caption: &str, seed: u64) -> Result<AlphaSequence<F>> {
        if caption.trim().is_empty() {
            return Err(Error::Input("caption is empty".into()));
        }
        sample_matte(video, caption, &self.denoiser, &self.codec, &self.sampler, seed)
    }
}

/// Matte applied to the video.
pub fn overlay<F: Real>(video: &FrameSequence<F>, matte: &AlphaSequence<F>) -> Result<FrameSequence<F>> {
    if video.dims() != matte.dims() {
        return Err(Error::Shape(format!("video {:?} vs matte {:?}", video.dims(), matte.dims())));
    }
    let mut out = video.array().clone();
    let alpha = matte.array();
    Zip::indexed(&mut out).for_each(|(t, y, x, _), v| *v *= alpha[[t, y, x, 0]]);
    FrameSequence::new(out)
}

/// Writes `out/alpha/*.png` and `out/overlay/*.png`; returns the alpha directory.
pub fn sample_to_dir<F: Real>(pipeline: &Pipeline<F>, video_dir: &Path, caption: &str, out: &Path, seed: u64) -> Result<PathBuf> {
    let video = io::read_frames::<F>(video_dir)?;
    let matte = pipeline.matte(&video, caption, seed)?;
    let alpha_dir = out.join("alpha");
    io::write_alpha(&alpha_dir, &matte)?;
    io::write_frames(&out.join("overlay"), &overlay(&video, &matte)?)?;
    Ok(alpha_dir)
}

/// Seed of one (sample, instance) prediction.
pub fn prediction_seed(seed: u64, sample: &str, instance: usize) -> u64 {
    derive_seed(seed, &format!("predict/{sample}"), instance as u64)
}

/// Predicts every instance of `split` under `data_root`, mirroring its layout
/// (`<id>/matte_<iid>/` plus captions) in `out`. Returns the written ids.
pub fn predict_split<F: Real>(pipeline: &Pipeline<F>, data_root: &Path, split: Split, out: &Path, seed: u64) -> Result<Vec<String>> {
    let samples = load_split::<F>(data_root, split)?;
    let mut ids = Vec::new();
    for s in &samples {
        let dir = out.join(&s.sample_id);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let mut captions = String::new();
        for (iid, caption, _) in &s.instances {
            let matte = pipeline.matte(&s.composite, caption, prediction_seed(seed, &s.sample_id, *iid))?;
            io::write_alpha(&dir.join(format!("matte_{iid}")), &matte)?;
            captions.push_str(&format!("{iid}\t{caption}\n"));
        }
        let path = dir.join(CAPTIONS_FILE);
        fs::write(&path, captions).map_err(Error::io(&path))?;
        ids.push(s.sample_id.clone());
    }
    Ok(ids)
}

/// Sample ids of `split` in `data_root`.
pub fn split_ids(data_root: &Path, split: Split) -> Result<Vec<String>> {
    Ok(read_manifest(&data_root.join(MANIFEST_FILE))?.into_iter().filter(|r| r.split == split).map(|r| r.sample_id).collect())
}
