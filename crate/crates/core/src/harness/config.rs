use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, CodecTrainConfig};
use crate::dataset::{derive_seed, SynthConfig};
use crate::diffusion::{DenoiserConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::objectives::{LossWeights, DEFAULT_LAMBDA1, DEFAULT_TAU};

/// Environment variable selecting the compute device.
pub const DEVICE_ENV: &str = "VRMATTE_DEVICE";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_root: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_root: "runs/default/data".into(), run_dir: "runs/default".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: DEFAULT_LAMBDA1, tau: DEFAULT_TAU }
    }
}

impl LossConfig {
    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Write a checkpoint every this many steps (0 writes only the final one).
    pub checkpoint_every: usize,
    /// Linear warmup length in steps.
    pub warmup: usize,
    /// Cosine decay of the learning rate to zero at `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-5, steps: 10_000, batch_size: 1, checkpoint_every: 1000, warmup: 0, cosine_decay: false }
    }
}

impl TrainConfig {
    /// Learning rate used for the 0-based optimizer step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if step < self.warmup { (step + 1) as f64 / self.warmup as f64 } else { 1.0 };
        let decay = if self.cosine_decay && self.steps > 0 {
            let p = (step as f64 / self.steps as f64).min(1.0);
            0.5 * (1.0 + (std::f64::consts::PI * p).cos())
        } else {
            1.0
        };
        self.lr * warm * decay
    }
}

/// Everything one experiment needs. Component seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            codec: CodecConfig::default(),
            codec_train: CodecTrainConfig::default(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
        .seeded()
    }
}

impl RunConfig {
    /// 32/8 toy dataset with desk-scale optimizer settings.
    pub fn toy() -> Self {
        Self {
            paths: PathsConfig { data_root: "runs/toy/data".into(), run_dir: "runs/toy".into() },
            synth: SynthConfig::toy(),
            train: TrainConfig { lr: 1e-3, steps: 2000, batch_size: 1, checkpoint_every: 500, warmup: 100, cosine_decay: true },
            ..Self::default()
        }
        .seeded()
    }

    /// Four training samples, trained until the model reproduces them.
    pub fn overfit() -> Self {
        let toy = Self::toy();
        Self {
            paths: PathsConfig { data_root: "runs/overfit/data".into(), run_dir: "runs/overfit".into() },
            synth: SynthConfig::overfit(),
            denoiser: DenoiserConfig { d_model: 128, depth: 3, ..toy.denoiser.clone() },
            train: TrainConfig { batch_size: 16, ..toy.train.clone() },
            ..toy
        }
        .seeded()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "toy" => Ok(Self::toy()),
            "overfit" => Ok(Self::overfit()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected default, toy or overfit)"))),
        }
    }

    /// Derives the component seeds from the master seed.
    pub fn seeded(mut self) -> Self {
        self.synth.master_seed = self.seed;
        self.codec_train.seed = derive_seed(self.seed, "codec", 0);
        self
    }

    pub fn diffusion_seed(&self) -> u64 {
        derive_seed(self.seed, "diffusion", 0)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.schedule.sampler()?;
        self.loss.weights()?;
        if !(self.loss.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.loss.tau)));
        }
        if self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return Err(Error::Config("train needs batch_size >= 1 and lr > 0".into()));
        }
        if self.denoiser.latent_channels != self.codec.channels {
            return Err(Error::Config(format!(
                "denoiser expects {} latent channels but the codec produces {}",
                self.denoiser.latent_channels, self.codec.channels
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        let cfg = cfg.seeded();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> Result<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths.run_dir.join("checkpoints")
    }

    pub fn codec_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("codec.ckpt")
    }

    pub fn diffusion_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("diffusion.ckpt")
    }

    pub fn log_path(&self, stage: &str) -> PathBuf {
        self.paths.run_dir.join("logs").join(format!("{stage}.jsonl"))
    }

    /// Creates the run directory and copies the configuration into it.
    pub fn prepare_run_dir(&self) -> Result<()> {
        let dir = &self.paths.run_dir;
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let snap = dir.join(CONFIG_SNAPSHOT);
        fs::write(&snap, self.to_toml()?).map_err(Error::io(&snap))
    }
}

/// Fails unless the requested device (if any) is the CPU.
pub fn check_device() -> Result<()> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok(()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") || v.is_empty() => Ok(()),
        Ok(v) => Err(Error::Config(format!("{DEVICE_ENV}={v}: only `cpu` is available in this build"))),
    }
}
