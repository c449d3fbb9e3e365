#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use vrmatte::dataset::{build_dataset, SourceConfig, Sources, SynthConfig};
use vrmatte::diffusion::{DenoiserConfig, ScheduleConfig};
use vrmatte::harness::{RunConfig, TrainConfig};
use vrmatte::text::TextConfig;

/// A run small enough to train in well under a second per stage.
pub fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 3,
        synth: SynthConfig {
            frames: 4,
            height: 16,
            width: 16,
            train_samples: 3,
            val_samples: 1,
            max_instances: 3,
            count_mean: 2.0,
            count_std: 0.0,
            sources: SourceConfig::Procedural { backgrounds: 4, foregrounds: 6, foreground_size: 16, seed: 2 },
            ..SynthConfig::toy()
        },
        denoiser: DenoiserConfig {
            d_model: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            text: TextConfig { slots: 4, dim: 8, ..TextConfig::default() },
            ..DenoiserConfig::default()
        },
        schedule: ScheduleConfig { t_diff: 100, sample_steps: 5, ..ScheduleConfig::default() },
        train: TrainConfig { lr: 1e-3, steps: 6, batch_size: 2, checkpoint_every: 3, warmup: 2, cosine_decay: true },
        ..RunConfig::default()
    };
    cfg.codec_train.steps = 20;
    cfg.codec_train.blocks_per_step = 8;
    cfg.codec_train.eval_every = 10;
    cfg.paths.data_root = root.join("data");
    cfg.paths.run_dir = root.join("run");
    cfg.seeded()
}

pub fn synth(cfg: &RunConfig) {
    let sources = Sources::<f32>::from_config(&cfg.synth.sources).unwrap();
    build_dataset(&cfg.synth, &sources, &cfg.paths.data_root).unwrap();
}
