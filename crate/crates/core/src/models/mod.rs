//! Video transformer families at toy scale: embeddings, tube masking with
//! masked-autoencoder reconstruction, attention factorizations, the
//! classification head and a query-key comparison counter.

pub mod archive;
mod config;
mod grid;
mod mask;
mod model;
mod variants;


pub use config::{DecoderConfig, Family, ModelConfig, Pooling};
pub use grid::{patchify, GridDims, TokenGrid};
pub use mask::{tube_mask, MaskPlan};
pub use model::{
    classify, encoder_forward, final_norm, mae_reconstruct, patch_embed, random_frames,
    tubelet_embed, MaeOutput, VideoModel,
};
pub use variants::{block_plans, comparison_count, AttentionVariant, ComparisonCount};

use std::path::Path;

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("weight archive: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
