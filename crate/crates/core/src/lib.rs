//! Video referring matting: a captioned synthetic dataset, a latent codec,
//! a text-conditioned latent diffusion denoiser with a latent contrastive
//! objective, and matte evaluation.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod scalar;
pub mod seq;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Codec32 = codec::ConvCodec<f32>;
pub type Codec64 = codec::ConvCodec<f64>;
pub type Denoiser32 = diffusion::Denoiser<f32>;
pub type Denoiser64 = diffusion::Denoiser<f64>;
pub type Frames32 = seq::FrameSequence<f32>;
pub type Frames64 = seq::FrameSequence<f64>;
pub type Alpha32 = seq::AlphaSequence<f32>;
pub type Alpha64 = seq::AlphaSequence<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
