//! Temporal sampling, padding and the train/eval transform pipelines.

mod jitter;
mod pipeline;
mod spatial;
mod temporal;

pub use jitter::{duplicate_jitter, JitterSpec};
pub use pipeline::{build_pipeline, Pipeline, TransformSpec};
pub use spatial::{
    center_crop, crop_at, flip_clip, horizontal_flip, random_crop, short_side_dims,
    short_side_scale,
};
pub use temporal::{
    clip_duration, sample_offset, temporal_pad, uniform_sample_indices, ClipDuration,
    SampleMode, SamplerConfig,
};

use crate::ingest::IngestError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("invalid transform configuration: {0}")]
    Config(String),
    #[error("cannot pad a {frames}-frame clip down to {target} frames")]
    PadShorter { frames: usize, target: usize },
    #[error("crop of {size} does not fit a {height}×{width} frame")]
    Crop {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
