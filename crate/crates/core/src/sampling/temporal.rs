use std::fmt;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SamplingError;
use crate::ingest::{ClipTensor, FrameRate};

/// `N` frames taken every `S` source frames from a clip recorded at `F` fps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_frames: usize,
    pub sample_rate: usize,
    pub fps: FrameRate,
}

impl SamplerConfig {
    pub fn new(num_frames: usize, sample_rate: usize, fps: FrameRate) -> Result<Self, SamplingError> {
        let cfg = Self {
            num_frames,
            sample_rate,
            fps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.num_frames == 0 || self.sample_rate == 0 {
            return Err(SamplingError::Config(format!(
                "num_frames ({}) and sample_rate ({}) must be at least 1",
                self.num_frames, self.sample_rate
            )));
        }
        Ok(())
    }

    /// Source frames spanned by one sampled clip, `N·S`.
    pub fn window(&self) -> usize {
        self.num_frames * self.sample_rate
    }
}

/// Exact clip duration in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClipDuration(pub Ratio<u64>);

impl ClipDuration {
    pub fn seconds(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for ClipDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.seconds())
    }
}

/// `C = N·S / F`.
pub fn clip_duration(cfg: &SamplerConfig) -> ClipDuration {
    let frames = Ratio::from_integer((cfg.num_frames * cfg.sample_rate) as u64);
    ClipDuration(frames / cfg.fps.ratio())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Train,
    Eval,
}

/// Start offset of the sampling window: uniform over `[0, max(0, T − N·S)]` in
/// training, centred in evaluation.
pub fn sample_offset(frames: usize, cfg: &SamplerConfig, mode: SampleMode, seed: u64) -> usize {
    let slack = frames.saturating_sub(cfg.window());
    match mode {
        SampleMode::Train => crate::seed::rng(seed).gen_range(0..=slack),
        SampleMode::Eval => slack / 2,
    }
}

/// `offset + j·S` for `j < N`, clamped to the last frame.
pub fn uniform_sample_indices(
    frames: usize,
    cfg: &SamplerConfig,
    mode: SampleMode,
    seed: u64,
) -> Vec<usize> {
    assert!(frames >= 1, "cannot sample from an empty clip");
    let offset = sample_offset(frames, cfg, mode, seed);
    (0..cfg.num_frames)
        .map(|j| (offset + j * cfg.sample_rate).min(frames - 1))
        .collect()
}

/// Repeats the final frame until the clip has `target` frames; the added
/// frames are flagged as duplicates.
pub fn temporal_pad(clip: &ClipTensor, target: usize) -> Result<ClipTensor, SamplingError> {
    let t = clip.num_frames();
    if target < t {
        return Err(SamplingError::PadShorter { frames: t, target });
    }
    if target == t {
        return Ok(clip.clone());
    }
    let idx: Vec<usize> = (0..target).map(|i| i.min(t - 1)).collect();
    let flags = (0..target)
        .map(|i| if i < t { clip.dup_flags[i] } else { true })
        .collect();
    Ok(clip.select(&idx, flags)?)
}
