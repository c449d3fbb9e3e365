//! Binary weight container shared by codec and diffusion checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VRMCKPT\0"
//! version    u32
//! header     u32 length + UTF-8 JSON (CheckpointHeader)
//! tensors    u32 count, then per tensor:
//!              u16 name length + UTF-8 name
//!              u8 dtype (4 = f32, 8 = f64), u32 rows, u32 cols, row-major values
//! trailer    32-byte SHA-256 of everything before it
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Matrix;
use crate::codec::{CodecConfig, ConvCodec};
use crate::diffusion::{Denoiser, DenoiserConfig, LatentNorm, ScheduleConfig, DENOISER_VERSION};
use crate::error::{Error, Result};
use crate::nn::{Adam, Params};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"VRMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
pub const CODEC_PREFIX: &str = "codec/";
pub const DENOISER_PREFIX: &str = "denoiser/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Codec,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecMeta {
    pub config: CodecConfig,
    pub trained_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub version: String,
    pub config: DenoiserConfig,
    pub norm: LatentNorm,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub dtype: String,
    /// Optimizer steps of the stage that wrote the checkpoint.
    pub step: u64,
    /// SHA-256 of the run configuration snapshot.
    pub config_digest: String,
    pub codec: CodecMeta,
    pub denoiser: Option<DenoiserMeta>,
    /// Optimizer step counter when optimizer moments are stored.
    pub optimizer_step: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Matrix<F>)>,
}

fn prefixed<'a, F: Real>(prefix: &str, p: &'a Params<F>) -> impl Iterator<Item = (String, Matrix<F>)> + 'a {
    let prefix = prefix.to_string();
    p.iter().map(move |(n, m)| (format!("{prefix}{n}"), m.clone()))
}

impl<F: Real> Checkpoint<F> {
    pub fn for_codec(codec: &ConvCodec<F>, step: u64, config_digest: &str) -> Self {
        let header = CheckpointHeader {
            kind: CheckpointKind::Codec,
            dtype: F::DTYPE.into(),
            step,
            config_digest: config_digest.into(),
            codec: CodecMeta { config: codec.config.clone(), trained_steps: codec.trained_steps },
            denoiser: None,
            optimizer_step: None,
            metrics: BTreeMap::new(),
        };
        Self { header, tensors: prefixed(CODEC_PREFIX, &codec.params).collect() }
    }

    pub fn for_diffusion(codec: &ConvCodec<F>, denoiser: &Denoiser<F>, schedule: &ScheduleConfig, step: u64, config_digest: &str) -> Self {
        let mut ck = Self::for_codec(codec, step, config_digest);
        ck.header.kind = CheckpointKind::Diffusion;
        ck.header.denoiser = Some(DenoiserMeta {
            version: DENOISER_VERSION.into(),
            config: denoiser.config.clone(),
            norm: denoiser.norm.clone(),
            schedule: schedule.clone(),
        });
        ck.tensors.extend(prefixed(DENOISER_PREFIX, &denoiser.params));
        ck
    }

    /// Stores Adam moments for the parameters that live under `prefix`.
    pub fn with_optimizer(mut self, prefix: &str, params: &Params<F>, opt: &Adam<F>) -> Self {
        let (m, v) = opt.moments();
        for (((name, value), m), v) in params.iter().zip(m).zip(v) {
            self.tensors.push((format!("adam.m/{prefix}{name}"), Matrix::new(value.rows, value.cols, m.clone())));
            self.tensors.push((format!("adam.v/{prefix}{name}"), Matrix::new(value.rows, value.cols, v.clone())));
        }
        self.header.optimizer_step = Some(opt.steps());
        self
    }

    pub fn section(&self, prefix: &str) -> Vec<(String, Matrix<F>)> {
        self.tensors.iter().filter_map(|(n, m)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), m.clone()))).collect()
    }

    pub fn codec(&self) -> Result<ConvCodec<F>> {
        let meta = &self.header.codec;
        ConvCodec::from_parts(meta.config.clone(), self.section(CODEC_PREFIX), meta.trained_steps)
    }

    pub fn denoiser(&self) -> Result<Denoiser<F>> {
        let meta = self.header.denoiser.as_ref().ok_or_else(|| Error::Checkpoint("checkpoint holds no denoiser".into()))?;
        if meta.version != DENOISER_VERSION {
            return Err(Error::Checkpoint(format!("unsupported denoiser version `{}`", meta.version)));
        }
        Denoiser::from_parts(meta.config.clone(), meta.norm.clone(), self.section(DENOISER_PREFIX))
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        self.header.denoiser.as_ref().map(|m| m.schedule.clone()).ok_or_else(|| Error::Checkpoint("checkpoint holds no denoiser".into()))
    }

    /// Adam state for `params` stored under `prefix`, or `None` if absent.
    pub fn optimizer(&self, prefix: &str, params: &Params<F>, lr: f64) -> Result<Option<Adam<F>>> {
        let Some(step) = self.header.optimizer_step else { return Ok(None) };
        let m = self.section(&format!("adam.m/{prefix}"));
        let v = self.section(&format!("adam.v/{prefix}"));
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state incomplete".into()));
        }
        let mut opt = Adam::new(params, lr);
        opt.restore(step, m.into_iter().map(|(_, x)| x.data).collect(), v.into_iter().map(|(_, x)| x.data).collect())?;
        Ok(Some(opt))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(FORMAT_VERSION).expect("vec write");
        let header = serde_json::to_vec(&self.header)?;
        out.write_u32::<LE>(header.len() as u32).expect("vec write");
        out.extend_from_slice(&header);
        out.write_u32::<LE>(self.tensors.len() as u32).expect("vec write");
        for (name, m) in &self.tensors {
            let n = name.as_bytes();
            if n.len() > u16::MAX as usize {
                return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
            }
            out.write_u16::<LE>(n.len() as u16).expect("vec write");
            out.extend_from_slice(n);
            let wide = F::DTYPE == "f64";
            out.write_u8(if wide { 8 } else { 4 }).expect("vec write");
            out.write_u32::<LE>(m.rows as u32).expect("vec write");
            out.write_u32::<LE>(m.cols as u32).expect("vec write");
            for v in &m.data {
                if wide {
                    out.write_f64::<LE>(v.f64()).expect("vec write");
                } else {
                    out.write_f32::<LE>(v.f64() as f32).expect("vec write");
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(what.to_string());
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Cursor::new(&body[MAGIC.len()..]);
        let trunc = |_| bad("truncated checkpoint");
        let version = r.read_u32::<LE>().map_err(trunc)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = r.read_u32::<LE>().map_err(trunc)? as usize;
        let mut header = vec![0; len];
        r.read_exact(&mut header).map_err(trunc)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let count = r.read_u32::<LE>().map_err(trunc)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = r.read_u16::<LE>().map_err(trunc)? as usize;
            let mut name = vec![0; n];
            r.read_exact(&mut name).map_err(trunc)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let dtype = r.read_u8().map_err(trunc)?;
            let rows = r.read_u32::<LE>().map_err(trunc)? as usize;
            let cols = r.read_u32::<LE>().map_err(trunc)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let v = match dtype {
                    4 => r.read_f32::<LE>().map_err(trunc)? as f64,
                    8 => r.read_f64::<LE>().map_err(trunc)?,
                    _ => return Err(Error::Checkpoint(format!("unknown dtype tag {dtype}"))),
                };
                data.push(F::lit(v));
            }
            tensors.push((name, Matrix::new(rows, cols, data)));
        }
        if (r.position() as usize) != body.len() - MAGIC.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Self { header, tensors })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes)
    }
}
