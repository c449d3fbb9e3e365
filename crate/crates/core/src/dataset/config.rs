use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::count::{DEFAULT_COUNT_MEAN, DEFAULT_COUNT_STD, DEFAULT_MAX_INSTANCES};
use super::transform::DEFAULT_MAX_AREA_RATIO;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Procedural { backgrounds: usize, foregrounds: usize, foreground_size: usize, seed: u64 },
    Directory { backgrounds: PathBuf, foregrounds: PathBuf, captions: PathBuf },
}

/// Dataset synthesis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub master_seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub max_instances: usize,
    pub count_mean: f64,
    pub count_std: f64,
    pub max_area_ratio: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_attempts: usize,
    /// Fraction of source clips held out for the validation split.
    pub val_source_fraction: f64,
    pub sources: SourceConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl SynthConfig {
    /// 32 train / 8 val samples of 16×64×64.
    pub fn toy() -> Self {
        Self {
            master_seed: 7,
            frames: 16,
            height: 64,
            width: 64,
            train_samples: 32,
            val_samples: 8,
            max_instances: DEFAULT_MAX_INSTANCES,
            count_mean: DEFAULT_COUNT_MEAN,
            count_std: DEFAULT_COUNT_STD,
            max_area_ratio: DEFAULT_MAX_AREA_RATIO,
            scale_min: 0.45,
            scale_max: 0.75,
            max_attempts: 64,
            val_source_fraction: 0.2,
            sources: SourceConfig::Procedural { backgrounds: 10, foregrounds: 24, foreground_size: 64, seed: 11 },
        }
    }

    /// Four training samples used to overfit the full pipeline.
    pub fn overfit() -> Self {
        Self {
            train_samples: 4,
            val_samples: 0,
            max_instances: 2,
            count_mean: 2.0,
            count_std: 0.0,
            sources: SourceConfig::Procedural { backgrounds: 4, foregrounds: 8, foreground_size: 64, seed: 11 },
            ..Self::toy()
        }
    }

    /// The full-scale layout: 9000 train / 1000 val clips of 120 frames.
    pub fn full(sources: SourceConfig) -> Self {
        Self {
            frames: 120,
            height: 480,
            width: 480,
            train_samples: 9000,
            val_samples: 1000,
            val_source_fraction: 0.1,
            sources,
            ..Self::toy()
        }
    }

    pub fn total_samples(&self) -> usize {
        self.train_samples + self.val_samples
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_instances < 1 {
            return bad("max_instances must be >= 1".into());
        }
        if !(self.count_std >= 0.0) {
            return bad(format!("count_std must be >= 0, got {}", self.count_std));
        }
        if self.frames < 1 || self.height < 8 || self.width < 8 {
            return bad(format!("clip shape {}x{}x{} too small", self.frames, self.height, self.width));
        }
        if !(self.scale_min > 0.0 && self.scale_max >= self.scale_min) {
            return bad(format!("invalid scale range [{}, {}]", self.scale_min, self.scale_max));
        }
        if !(self.max_area_ratio >= 1.0) {
            return bad(format!("max_area_ratio must be >= 1, got {}", self.max_area_ratio));
        }
        if !(0.0..1.0).contains(&self.val_source_fraction) {
            return bad(format!("val_source_fraction must be in [0,1), got {}", self.val_source_fraction));
        }
        if self.total_samples() == 0 {
            return bad("no samples requested".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_documented_sizes() {
        assert_eq!(SynthConfig::toy().total_samples(), 40);
        let full = SynthConfig::full(SynthConfig::toy().sources);
        assert_eq!((full.train_samples, full.val_samples), (9000, 1000));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SynthConfig::overfit();
        let text = toml::to_string(&cfg).unwrap();
        let back: SynthConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let cfg = SynthConfig { max_instances: 0, ..SynthConfig::toy() };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig { count_std: -1.0, ..SynthConfig::toy() };
        assert!(cfg.validate().is_err());
    }
}
