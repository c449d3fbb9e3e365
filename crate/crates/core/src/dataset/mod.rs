//! Captioned multi-instance matting video synthesis.
//!
//! Foreground instances are resized, repositioned and layered over background
//! clips; each instance keeps its own transformed (pre-occlusion) matte and
//! caption.

mod build;
mod composite;
mod config;
mod count;
pub mod sources;
mod transform;

pub use build::{
    build_dataset, build_sample, count_seed, derive_seed, load_sample, read_captions, read_manifest, sample_id, sample_seed, split_of,
    write_sample, LoadedSample, ManifestRecord, Pools, Sources, Split, CAPTIONS_FILE, CONFIG_SNAPSHOT, MANIFEST_FILE,
};
pub use composite::composite;
pub use config::{SourceConfig, SynthConfig};
pub use count::{sample_instance_count, DEFAULT_COUNT_MEAN, DEFAULT_COUNT_STD, DEFAULT_MAX_INSTANCES};
pub use transform::{apply_transform, bbox_area, enforce_size_balance, Transform, DEFAULT_MAX_AREA_RATIO};

use crate::seq::{AlphaSequence, FrameSequence};

/// One placed foreground instance, already on the background canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec<F> {
    pub instance_id: usize,
    pub foreground: FrameSequence<F>,
    pub matte: AlphaSequence<F>,
    pub caption: String,
    pub transform: Transform,
}

/// A synthesized training/validation record.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample<F> {
    pub sample_id: String,
    pub background: FrameSequence<F>,
    /// Back to front.
    pub instances: Vec<InstanceSpec<F>>,
    pub composite: FrameSequence<F>,
    pub seed: u64,
}
