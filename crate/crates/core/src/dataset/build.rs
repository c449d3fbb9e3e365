use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

use super::config::{SourceConfig, SynthConfig};
use super::sources::{
    BackgroundSource, CaptionSource, DirBackgrounds, DirCaptions, DirForegrounds, ForegroundSource, ProceduralBackgrounds,
    ProceduralForegrounds,
};
use super::{apply_transform, composite, enforce_size_balance, sample_instance_count, CompositeSample, InstanceSpec, Transform};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_SNAPSHOT: &str = "synth_config.toml";
pub const CAPTIONS_FILE: &str = "captions.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub seed: u64,
    pub n_instances: usize,
    /// Back-to-front layering order.
    pub instance_ids: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub split: Split,
    pub background: String,
    pub foregrounds: Vec<String>,
}

/// Stable per-stream seed derivation.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut bytes = stream.as_bytes().to_vec();
    bytes.extend_from_slice(&index.to_le_bytes());
    xxh64(&bytes, master)
}

pub fn sample_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, "sample", index as u64)
}

/// Seed handed to [`sample_instance_count`] for a sample.
pub fn count_seed(sample_seed: u64) -> u64 {
    derive_seed(sample_seed, "count", 0)
}

/// Resolved clip sources.
pub struct Sources<F: Real> {
    pub backgrounds: Box<dyn BackgroundSource<F>>,
    pub foregrounds: Box<dyn ForegroundSource<F>>,
    pub captions: Box<dyn CaptionSource>,
}

impl<F: Real> Sources<F> {
    pub fn from_config(cfg: &SourceConfig) -> Result<Self> {
        Ok(match cfg {
            SourceConfig::Procedural { backgrounds, foregrounds, foreground_size, seed } => {
                let fg = ProceduralForegrounds { count: *foregrounds, seed: *seed, size: *foreground_size };
                Self {
                    backgrounds: Box::new(ProceduralBackgrounds { count: *backgrounds, seed: *seed }),
                    captions: Box::new(fg.captions()),
                    foregrounds: Box::new(fg),
                }
            }
            SourceConfig::Directory { backgrounds, foregrounds, captions } => Self {
                backgrounds: Box::new(DirBackgrounds::open(backgrounds)?),
                foregrounds: Box::new(DirForegrounds::open(foregrounds)?),
                captions: Box::new(DirCaptions::open(captions)),
            },
        })
    }
}

/// Source clip indices reserved for each split; the two pools are disjoint.
#[derive(Debug, Clone)]
pub struct Pools {
    pub train_bg: Vec<usize>,
    pub val_bg: Vec<usize>,
    pub train_fg: Vec<usize>,
    pub val_fg: Vec<usize>,
}

fn partition(n: usize, fraction: f64, need_val: bool, what: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Config(format!("no {what} clips")));
    }
    if !need_val {
        return Ok(((0..n).collect(), Vec::new()));
    }
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 {what} clips for disjoint train/val splits")));
    }
    let n_val = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
    Ok(((0..n - n_val).collect(), (n - n_val..n).collect()))
}

impl Pools {
    pub fn new<F: Real>(cfg: &SynthConfig, sources: &Sources<F>) -> Result<Self> {
        let need_val = cfg.val_samples > 0;
        let (train_bg, val_bg) = partition(sources.backgrounds.len(), cfg.val_source_fraction, need_val, "background")?;
        let (train_fg, val_fg) = partition(sources.foregrounds.len(), cfg.val_source_fraction, need_val, "foreground")?;
        Ok(Self { train_bg, val_bg, train_fg, val_fg })
    }
}

pub fn sample_id(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("train_{index:05}"),
        Split::Val => format!("val_{index:05}"),
    }
}

/// Global index → (split, index within split).
pub fn split_of(cfg: &SynthConfig, index: usize) -> (Split, usize) {
    if index < cfg.train_samples {
        (Split::Train, index)
    } else {
        (Split::Val, index - cfg.train_samples)
    }
}

fn random_transform(rng: &mut ChaCha8Rng, cfg: &SynthConfig, fg_h: usize, fg_w: usize) -> Transform {
    let scale = if cfg.scale_max > cfg.scale_min { rng.random_range(cfg.scale_min..cfg.scale_max) } else { cfg.scale_min };
    let probe = Transform { scale, offset_x: 0, offset_y: 0 };
    let (sh, sw) = probe.scaled_size(fg_h, fg_w);
    // keep at least a quarter of each side on the canvas
    let mut span = |canvas: usize, size: usize| {
        let lo = -((size / 4) as i64);
        let hi = canvas as i64 - (size as i64 * 3 / 4).max(1);
        if hi <= lo {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let offset_y = span(cfg.height, sh);
    let offset_x = span(cfg.width, sw);
    Transform { scale, offset_x, offset_y }
}

/// Builds sample `index` in memory. Pure given the config and sources.
pub fn build_sample<F: Real>(
    cfg: &SynthConfig,
    sources: &Sources<F>,
    pools: &Pools,
    index: usize,
) -> Result<(CompositeSample<F>, ManifestRecord)> {
    let (split, local) = split_of(cfg, index);
    let (bg_pool, fg_pool) = match split {
        Split::Train => (&pools.train_bg, &pools.train_fg),
        Split::Val => (&pools.val_bg, &pools.val_fg),
    };
    let seed = sample_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_index = bg_pool[rng.random_range(0..bg_pool.len())];
    let wanted = sample_instance_count(count_seed(seed), cfg.count_mean, cfg.count_std, cfg.max_instances)?;
    let n = wanted.min(fg_pool.len());
    let picks: Vec<usize> = sample_indices(&mut rng, fg_pool.len(), n).into_iter().map(|i| fg_pool[i]).collect();

    let background = sources.backgrounds.load(bg_index, cfg.frames, cfg.height, cfg.width)?;
    let mut clips = Vec::with_capacity(n);
    for &fg in &picks {
        let id = sources.foregrounds.id(fg);
        let caption = sources.captions.caption(&id)?;
        clips.push((id, caption, sources.foregrounds.load(fg, cfg.frames)?));
    }

    let mut instances = Vec::new();
    let mut balanced = false;
    for _ in 0..cfg.max_attempts.max(1) {
        instances.clear();
        for (k, (_, caption, clip)) in clips.iter().enumerate() {
            let (_, fh, fw) = clip.matte.dims();
            let placed = loop {
                let tr = random_transform(&mut rng, cfg, fh, fw);
                match apply_transform(&clip.frames, &clip.matte, &tr, cfg.height, cfg.width) {
                    Ok((f, m)) => break (tr, f, m),
                    Err(Error::Placement) => continue,
                    Err(e) => return Err(e),
                }
            };
            instances.push(InstanceSpec {
                instance_id: k,
                foreground: placed.1,
                matte: placed.2,
                caption: caption.clone(),
                transform: placed.0,
            });
        }
        if enforce_size_balance(instances.iter().map(|i| &i.matte), cfg.max_area_ratio) {
            balanced = true;
            break;
        }
    }
    if !balanced {
        return Err(Error::Data(format!("sample {index}: no size-balanced placement within {} attempts", cfg.max_attempts)));
    }

    let composite = composite(&background, &instances)?;
    let sample_id = sample_id(split, local);
    let record = ManifestRecord {
        sample_id: sample_id.clone(),
        seed,
        n_instances: n,
        instance_ids: instances.iter().map(|i| i.instance_id).collect(),
        width: cfg.width,
        height: cfg.height,
        n_frames: cfg.frames,
        split,
        background: sources.backgrounds.id(bg_index),
        foregrounds: clips.iter().map(|c| c.0.clone()).collect(),
    };
    Ok((CompositeSample { sample_id, background, instances, composite, seed }, record))
}

/// Writes one sample directory.
pub fn write_sample<F: Real>(root: &Path, sample: &CompositeSample<F>) -> Result<()> {
    let dir = root.join(&sample.sample_id);
    io::write_frames(&dir.join("composite"), &sample.composite)?;
    let mut captions = String::new();
    for inst in &sample.instances {
        io::write_alpha(&dir.join(format!("matte_{}", inst.instance_id)), &inst.matte)?;
        captions.push_str(&format!("{}\t{}\n", inst.instance_id, inst.caption.replace(['\t', '\n'], " ")));
    }
    let path = dir.join(CAPTIONS_FILE);
    fs::write(&path, captions).map_err(Error::io(&path))
}

/// Synthesizes every configured sample under `root` and writes the manifest.
/// Returns the manifest path.
pub fn build_dataset<F: Real>(cfg: &SynthConfig, sources: &Sources<F>, root: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(Error::io(root))?;
    let pools = Pools::new(cfg, sources)?;
    let manifest_path = root.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest_path).map_err(Error::io(&manifest_path))?;
    let mut out = std::io::BufWriter::new(file);
    for index in 0..cfg.total_samples() {
        let (sample, record) = build_sample(cfg, sources, &pools, index)?;
        write_sample(root, &sample)?;
        let line = serde_json::to_string(&record)?;
        writeln!(out, "{line}").map_err(Error::io(&manifest_path))?;
    }
    out.flush().map_err(Error::io(&manifest_path))?;
    let snapshot = root.join(CONFIG_SNAPSHOT);
    let text = toml::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&snapshot, text).map_err(Error::io(&snapshot))?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// `captions.txt` as `(instance_id, caption)` pairs in file order.
pub fn read_captions(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, cap) = l.split_once('\t').ok_or_else(|| Error::Data(format!("{}: malformed caption line `{l}`", path.display())))?;
            let id = id.trim().parse().map_err(|_| Error::Data(format!("{}: bad instance id `{id}`", path.display())))?;
            Ok((id, cap.trim().to_string()))
        })
        .collect()
}

/// A sample read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample<F> {
    pub sample_id: String,
    pub composite: FrameSequence<F>,
    /// `(instance_id, caption, matte)` in layering order.
    pub instances: Vec<(usize, String, AlphaSequence<F>)>,
}

pub fn load_sample<F: Real>(root: &Path, sample_id: &str) -> Result<LoadedSample<F>> {
    let dir = root.join(sample_id);
    let composite = io::read_frames(&dir.join("composite"))?;
    let mut instances = Vec::new();
    for (id, caption) in read_captions(&dir.join(CAPTIONS_FILE))? {
        let matte = io::read_alpha(&dir.join(format!("matte_{id}")))?;
        instances.push((id, caption, matte));
    }
    Ok(LoadedSample { sample_id: sample_id.to_string(), composite, instances })
}
