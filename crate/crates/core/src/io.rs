//! PNG frame-directory I/O (`%06d.png`, 8-bit).

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array4;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seq::{AlphaSequence, FrameSequence};

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("{t:06}.png"))
}

fn to_u8<F: Real>(v: F) -> u8 {
    (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_u8<F: Real>(v: u8) -> F {
    F::lit(f64::from(v) / 255.0)
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    img(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn write_frames<F: Real>(dir: &Path, seq: &FrameSequence<F>) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let (t, h, w) = seq.dims();
    let a = seq.array();
    for f in 0..t {
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([to_u8(a[[f, y, x, 0]]), to_u8(a[[f, y, x, 1]]), to_u8(a[[f, y, x, 2]])])
        });
        let path = frame_path(dir, f);
        save(|p| img.save(p), &path)?;
    }
    Ok(())
}

pub fn write_alpha<F: Real>(dir: &Path, seq: &AlphaSequence<F>) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let (t, h, w) = seq.dims();
    let a = seq.array();
    for f in 0..t {
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(a[[f, y as usize, x as usize, 0]])]));
        let path = frame_path(dir, f);
        save(|p| img.save(p), &path)?;
    }
    Ok(())
}

/// Sorted `*.png` paths in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no PNG frames in {}", dir.display())));
    }
    Ok(paths)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_frames<F: Real>(dir: &Path) -> Result<FrameSequence<F>> {
    let paths = list_frames(dir)?;
    let first = open(&paths[0])?.to_rgb8();
    let (w, h) = first.dimensions();
    let mut out = Array4::zeros((paths.len(), h as usize, w as usize, 3));
    for (f, p) in paths.iter().enumerate() {
        let img = if f == 0 { first.clone() } else { open(p)?.to_rgb8() };
        if img.dimensions() != (w, h) {
            return Err(Error::Data(format!("{}: frame size differs from first frame", p.display())));
        }
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out[[f, y as usize, x as usize, c]] = from_u8(px.0[c]);
            }
        }
    }
    FrameSequence::new(out)
}

pub fn read_alpha<F: Real>(dir: &Path) -> Result<AlphaSequence<F>> {
    let paths = list_frames(dir)?;
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        frames.push(open(p)?.to_luma8());
    }
    let (w, h) = frames[0].dimensions();
    let mut out = Array4::zeros((frames.len(), h as usize, w as usize, 1));
    for (f, img) in frames.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::Data(format!("{}: frame size differs from first frame", paths[f].display())));
        }
        for (x, y, px) in img.enumerate_pixels() {
            out[[f, y as usize, x as usize, 0]] = from_u8(px.0[0]);
        }
    }
    AlphaSequence::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a =
            AlphaSequence::new(Array4::from_shape_fn((2, 8, 9, 1), |(t, y, x, _)| ((t * 31 + y * 7 + x) % 256) as f64 / 255.0)).unwrap();
        write_alpha(dir.path(), &a).unwrap();
        let b: AlphaSequence<f64> = read_alpha(dir.path()).unwrap();
        let err = a.array().iter().zip(b.array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_frames::<f32>(dir.path()).is_err());
    }
}
