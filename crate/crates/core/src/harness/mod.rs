//! Training controller, inference and evaluation drivers behind the CLI.

mod config;
mod eval;
mod infer;
mod train;

pub use config::{check_device, LossConfig, PathsConfig, RunConfig, TrainConfig, CONFIG_SNAPSHOT, DEVICE_ENV};
pub use eval::{evaluate, Aggregate, EvalOptions, EvalReport, InstanceRow, SampleRow, REPORT_JSON, REPORT_TXT};
pub use infer::{overlay, predict_split, prediction_seed, sample_to_dir, split_ids, Pipeline};
pub use train::{
    load_split, read_log, train_codec_stage, train_diffusion_stage, CodecLog, DiffusionLog, DiffusionTrainer, JsonlLog, StageSummary,
};
