//! Background clips, foreground/matte clips and their captions.
//!
//! Directory layouts:
//! - backgrounds: `<root>/<clip_id>/%06d.png` (RGB)
//! - foregrounds: `<root>/<clip_id>/rgb/%06d.png` and `<root>/<clip_id>/alpha/%06d.png`
//! - captions: `<root>/<foreground clip_id>.txt`, one caption per file

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

pub trait BackgroundSource<F: Real> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn id(&self, index: usize) -> String;
    /// Clip of exactly `frames×height×width`.
    fn load(&self, index: usize, frames: usize, height: usize, width: usize) -> Result<FrameSequence<F>>;
}

pub struct ForegroundClip<F> {
    pub frames: FrameSequence<F>,
    pub matte: AlphaSequence<F>,
}

pub trait ForegroundSource<F: Real> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn id(&self, index: usize) -> String;
    /// Clip of exactly `frames` frames at the source's native resolution.
    fn load(&self, index: usize, frames: usize) -> Result<ForegroundClip<F>>;
}

pub trait CaptionSource {
    fn caption(&self, foreground_id: &str) -> Result<String>;
}

/// In-memory caption table.
#[derive(Debug, Clone, Default)]
pub struct CaptionTable(pub BTreeMap<String, String>);

impl CaptionSource for CaptionTable {
    fn caption(&self, foreground_id: &str) -> Result<String> {
        match self.0.get(foreground_id) {
            Some(c) if !c.trim().is_empty() => Ok(c.trim().to_string()),
            _ => Err(Error::Ingestion(format!("no caption for foreground `{foreground_id}`"))),
        }
    }
}

fn sub_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(root).map_err(Error::io(root))?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Ingestion(format!("no clips under {}", root.display())));
    }
    Ok(dirs)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loops the clip in time to exactly `frames` frames.
fn loop_frames<F: Real>(a: &Array4<F>, frames: usize) -> Array4<F> {
    let (t, h, w, c) = a.dim();
    Array4::from_shape_fn((frames, h, w, c), |(f, y, x, ch)| a[[f % t, y, x, ch]])
}

pub struct DirBackgrounds {
    clips: Vec<PathBuf>,
}

impl DirBackgrounds {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self { clips: sub_dirs(root)? })
    }
}

impl<F: Real> BackgroundSource<F> for DirBackgrounds {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn id(&self, index: usize) -> String {
        dir_name(&self.clips[index])
    }

    fn load(&self, index: usize, frames: usize, height: usize, width: usize) -> Result<FrameSequence<F>> {
        let clip: FrameSequence<F> = io::read_frames(&self.clips[index])?;
        let (_, h, w) = clip.dims();
        if h < height || w < width {
            return Err(Error::Ingestion(format!(
                "{}: background {h}x{w} smaller than canvas {height}x{width}",
                self.clips[index].display()
            )));
        }
        let cropped = clip.array().slice(ndarray::s![.., ..height, ..width, ..]).to_owned();
        FrameSequence::new(loop_frames(&cropped, frames))
    }
}

pub struct DirForegrounds {
    clips: Vec<PathBuf>,
}

impl DirForegrounds {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self { clips: sub_dirs(root)? })
    }
}

impl<F: Real> ForegroundSource<F> for DirForegrounds {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn id(&self, index: usize) -> String {
        dir_name(&self.clips[index])
    }

    fn load(&self, index: usize, frames: usize) -> Result<ForegroundClip<F>> {
        let root = &self.clips[index];
        let rgb: FrameSequence<F> = io::read_frames(&root.join("rgb"))?;
        let alpha: AlphaSequence<F> = io::read_alpha(&root.join("alpha"))?;
        if rgb.dims() != alpha.dims() {
            return Err(Error::Ingestion(format!("{}: rgb and alpha shapes differ", root.display())));
        }
        Ok(ForegroundClip {
            frames: FrameSequence::new(loop_frames(rgb.array(), frames))?,
            matte: AlphaSequence::new(loop_frames(alpha.array(), frames))?,
        })
    }
}

pub struct DirCaptions {
    root: PathBuf,
}

impl DirCaptions {
    pub fn open(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
}

impl CaptionSource for DirCaptions {
    fn caption(&self, foreground_id: &str) -> Result<String> {
        let path = self.root.join(format!("{foreground_id}.txt"));
        let text = fs::read_to_string(&path).map_err(|_| Error::Ingestion(format!("missing caption file {}", path.display())))?;
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Ingestion(format!("empty caption in {}", path.display())));
        }
        Ok(text.to_string())
    }
}

const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [0.90, 0.15, 0.12]),
    ("green", [0.15, 0.80, 0.25]),
    ("blue", [0.15, 0.30, 0.95]),
    ("yellow", [0.95, 0.90, 0.15]),
    ("purple", [0.60, 0.20, 0.80]),
    ("orange", [0.98, 0.55, 0.10]),
    ("white", [0.97, 0.97, 0.97]),
    ("cyan", [0.10, 0.85, 0.90]),
];

const SHAPES: [&str; 4] = ["circle", "square", "diamond", "ring"];
const MOTIONS: [(&str, f64, f64); 5] =
    [("left", -1.0, 0.0), ("right", 1.0, 0.0), ("up", 0.0, -1.0), ("down", 0.0, 1.0), ("in place", 0.0, 0.0)];

/// Procedurally drawn backgrounds: two-color gradients with a drifting texture.
#[derive(Debug, Clone)]
pub struct ProceduralBackgrounds {
    pub count: usize,
    pub seed: u64,
}

impl<F: Real> BackgroundSource<F> for ProceduralBackgrounds {
    fn len(&self) -> usize {
        self.count
    }

    fn id(&self, index: usize) -> String {
        format!("bg{index:04}")
    }

    fn load(&self, index: usize, frames: usize, height: usize, width: usize) -> Result<FrameSequence<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.6));
        let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.6));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let freq: f64 = rng.random_range(0.15..0.45);
        let drift: f64 = rng.random_range(-0.3..0.3);
        let (ca, sa) = (angle.cos(), angle.sin());
        let a = Array4::from_shape_fn((frames, height, width, 3), |(t, y, x, c)| {
            let u = (x as f64 / width as f64 - 0.5) * ca + (y as f64 / height as f64 - 0.5) * sa + 0.5;
            let tex = 0.08 * ((x as f64 * freq + t as f64 * drift).sin() * (y as f64 * freq * 0.7).cos());
            (c0[c] * (1.0 - u) + c1[c] * u + tex).clamp(0.0, 1.0)
        });
        FrameSequence::new(a.mapv(F::lit))
    }
}

/// Procedurally drawn foreground instances with soft-edged mattes.
#[derive(Debug, Clone)]
pub struct ProceduralForegrounds {
    pub count: usize,
    pub seed: u64,
    /// Side of the square source clip.
    pub size: usize,
}

#[derive(Debug, Clone, Copy)]
struct FgAttrs {
    color: usize,
    shape: usize,
    motion: usize,
}

impl ProceduralForegrounds {
    fn attrs(&self, index: usize) -> FgAttrs {
        // Consecutive indices cycle through distinct color/shape pairs.
        let color = index % PALETTE.len();
        let shape = (index / PALETTE.len() + index) % SHAPES.len();
        let motion = (index * 3 + (self.seed as usize % 5)) % MOTIONS.len();
        FgAttrs { color, shape, motion }
    }

    pub fn caption_for(&self, index: usize) -> String {
        let a = self.attrs(index);
        format!("the {} {} moving {}", PALETTE[a.color].0, SHAPES[a.shape], MOTIONS[a.motion].0)
    }

    pub fn captions(&self) -> CaptionTable {
        CaptionTable((0..self.count).map(|i| (<Self as ForegroundSource<f64>>::id(self, i), self.caption_for(i))).collect())
    }
}

/// Soft coverage of a shape at normalized offset `(dx, dy)` from its center;
/// `r` is the radius and `soft` the edge width, all in pixels.
fn coverage(shape: usize, dx: f64, dy: f64, r: f64, soft: f64) -> f64 {
    let sd = match shape {
        0 => (dx * dx + dy * dy).sqrt() - r,
        1 => dx.abs().max(dy.abs()) - r * 0.85,
        2 => dx.abs() + dy.abs() - r * 1.2,
        _ => ((dx * dx + dy * dy).sqrt() - r * 0.7).abs() - r * 0.3,
    };
    let x = (0.5 - sd / soft).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl<F: Real> ForegroundSource<F> for ProceduralForegrounds {
    fn len(&self) -> usize {
        self.count
    }

    fn id(&self, index: usize) -> String {
        format!("fg{index:04}")
    }

    fn load(&self, index: usize, frames: usize) -> Result<ForegroundClip<F>> {
        let attrs = self.attrs(index);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0xF00D) ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        let s = self.size as f64;
        let r = s * rng.random_range(0.26..0.32);
        let speed = s * 0.012;
        let (_, vx, vy) = MOTIONS[attrs.motion];
        let color = PALETTE[attrs.color].1;
        let stripe: f64 = rng.random_range(0.3..0.6);
        let mut rgb = Array4::zeros((frames, self.size, self.size, 3));
        let mut alpha = Array4::zeros((frames, self.size, self.size, 1));
        for t in 0..frames {
            let shift = t as f64 - (frames as f64 - 1.0) / 2.0;
            let cx = s / 2.0 + vx * speed * shift;
            let cy = s / 2.0 + vy * speed * shift;
            for y in 0..self.size {
                for x in 0..self.size {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let a = coverage(attrs.shape, dx, dy, r, 1.5);
                    alpha[[t, y, x, 0]] = F::lit(a);
                    let shade = 0.85 + 0.15 * ((dx + dy) * stripe).sin();
                    for c in 0..3 {
                        rgb[[t, y, x, c]] = F::lit(if a > 0.0 { (color[c] * shade).clamp(0.0, 1.0) } else { 0.0 });
                    }
                }
            }
        }
        Ok(ForegroundClip { frames: FrameSequence::new(rgb)?, matte: AlphaSequence::new(alpha)? })
    }
}

/// Writes a procedural source set to disk in the directory layouts above.
pub fn export_procedural(
    root: &Path,
    backgrounds: &ProceduralBackgrounds,
    foregrounds: &ProceduralForegrounds,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<()> {
    for i in 0..backgrounds.count {
        let clip: FrameSequence<f32> = backgrounds.load(i, frames, height, width)?;
        let id = <ProceduralBackgrounds as BackgroundSource<f32>>::id(backgrounds, i);
        io::write_frames(&root.join("backgrounds").join(id), &clip)?;
    }
    let captions = root.join("captions");
    fs::create_dir_all(&captions).map_err(Error::io(&captions))?;
    for i in 0..foregrounds.count {
        let clip: ForegroundClip<f32> = foregrounds.load(i, frames)?;
        let id = <ProceduralForegrounds as ForegroundSource<f32>>::id(foregrounds, i);
        let dir = root.join("foregrounds").join(&id);
        io::write_frames(&dir.join("rgb"), &clip.frames)?;
        io::write_alpha(&dir.join("alpha"), &clip.matte)?;
        let path = captions.join(format!("{id}.txt"));
        fs::write(&path, foregrounds.caption_for(i) + "\n").map_err(Error::io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedural_clips_are_deterministic_and_valid() {
        let fg = ProceduralForegrounds { count: 4, seed: 3, size: 32 };
        let a: ForegroundClip<f64> = fg.load(2, 4).unwrap();
        let b: ForegroundClip<f64> = fg.load(2, 4).unwrap();
        assert_eq!(a.matte, b.matte);
        let mass: f64 = a.matte.array().iter().sum();
        assert!(mass > 100.0);
        let bg = ProceduralBackgrounds { count: 2, seed: 3 };
        let c: FrameSequence<f32> = bg.load(1, 3, 16, 24).unwrap();
        assert_eq!(c.dims(), (3, 16, 24));
    }

    #[test]
    fn first_foregrounds_have_distinct_captions() {
        let fg = ProceduralForegrounds { count: 8, seed: 0, size: 16 };
        let caps: std::collections::BTreeSet<_> = (0..8).map(|i| fg.caption_for(i)).collect();
        assert_eq!(caps.len(), 8);
    }

    #[test]
    fn missing_caption_is_an_ingestion_error() {
        let table = CaptionTable::default();
        assert!(matches!(table.caption("fg0000"), Err(Error::Ingestion(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DirCaptions::open(dir.path()).caption("x"), Err(Error::Ingestion(_))));
    }

    #[test]
    fn exported_sources_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let bgs = ProceduralBackgrounds { count: 1, seed: 1 };
        let fgs = ProceduralForegrounds { count: 2, seed: 1, size: 16 };
        export_procedural(dir.path(), &bgs, &fgs, 2, 16, 16).unwrap();
        let b = DirBackgrounds::open(&dir.path().join("backgrounds")).unwrap();
        let clip: FrameSequence<f32> = b.load(0, 3, 8, 8).unwrap();
        assert_eq!(clip.dims(), (3, 8, 8));
        let f = DirForegrounds::open(&dir.path().join("foregrounds")).unwrap();
        let fc: ForegroundClip<f32> = f.load(1, 2).unwrap();
        assert_eq!(fc.matte.dims(), (2, 16, 16));
        let caps = DirCaptions::open(&dir.path().join("captions"));
        assert_eq!(caps.caption("fg0001").unwrap(), fgs.caption_for(1));
    }
}
