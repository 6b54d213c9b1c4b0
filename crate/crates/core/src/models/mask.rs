use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{GridDims, ModelError};
use crate::seed::rng;

/// Tube mask: one spatial mask shared by every temporal index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub dims: GridDims,
    /// `true` where the spatial position is masked, `h·w` entries.
    pub spatial: Vec<bool>,
    pub ratio: f64,
    pub seed: u64,
}

/// Masks `round(ρ·h·w)` spatial positions (half rounds up), sampled without
/// replacement, keeping at least one visible.
pub fn tube_mask(dims: GridDims, ratio: f64, seed: u64) -> Result<MaskPlan, ModelError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(ModelError::Config(format!("mask ratio {ratio} outside [0,1)")));
    }
    let n = dims.patches();
    let mut masked = (ratio * n as f64 + 0.5).floor() as usize;
    if masked >= n {
        log::warn!("mask ratio {ratio} would hide all {n} positions; keeping one visible");
        masked = n - 1;
    }
    let mut spatial = vec![false; n];
    for i in sample(&mut rng(seed), n, masked) {
        spatial[i] = true;
    }
    Ok(MaskPlan {
        dims,
        spatial,
        ratio,
        seed,
    })
}

impl MaskPlan {
    pub fn masked_per_slice(&self) -> usize {
        self.spatial.iter().filter(|&&m| m).count()
    }

    pub fn visible_per_slice(&self) -> usize {
        self.spatial.len() - self.masked_per_slice()
    }

    /// Mask over all grid tokens in t-major order.
    pub fn token_mask(&self) -> Vec<bool> {
        (0..self.dims.t).flat_map(|_| self.spatial.iter().copied()).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.indices(false)
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.indices(true)
    }

    fn indices(&self, masked: bool) -> Vec<usize> {
        self.token_mask()
            .into_iter()
            .enumerate()
            .filter(|&(_, m)| m == masked)
            .map(|(i, _)| i)
            .collect()
    }
}
