//! Annotation parsing, clip extraction, frame-rate correction, resizing and
//! the on-disk clip and manifest formats.

mod annotation;
mod clip;
pub mod container;
mod frc;
mod manifest;
mod resize;

use std::path::{Path, PathBuf};

pub use annotation::{parse_annotations, write_annotations, GlossAnnotation};
pub use clip::{extract_clip, ClipTensor, FrameRate};
pub use container::{read_clip, write_clip, SampleFormat};
pub use frc::{frc_resample, frc_source_indices};
pub use manifest::{ClipManifest, ManifestRecord};
pub use resize::{resize_clip, resize_frame, resize_normalize, Normalization};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("annotation parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("annotation {index} (video {video_id}): {message}")]
    Validation {
        index: usize,
        video_id: String,
        message: String,
    },
    #[error("video {video_id}: frames {start}..={end} out of range for {frames} frames")]
    Bounds {
        video_id: String,
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("cannot resample {from} fps down to {to} fps")]
    UnsupportedDownsample { from: FrameRate, to: FrameRate },
    #[error("clip format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
