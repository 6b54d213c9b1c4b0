use rand::Rng;
use serde::{Deserialize, Serialize};

use super::jitter::{frame_seed, jitter_frame, JitterSpec};
use super::spatial::{center_crop, flip_decision, flip_clip, random_crop, short_side_scale};
use super::temporal::{uniform_sample_indices, SampleMode, SamplerConfig};
use super::SamplingError;
use crate::ingest::{ClipTensor, Normalization};
use crate::seed::derive;

/// Parameters of the spatial and duplicate-frame transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSpec {
    /// Side of the square network input.
    pub crop_size: usize,
    /// Inclusive range of the random short-side target used in training.
    pub scale_range: [usize; 2],
    pub flip_prob: f64,
    pub jitter: JitterSpec,
    pub normalization: Normalization,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::for_side(224)
    }
}

impl TransformSpec {
    /// Defaults for a `side × side` input: short side scaled into
    /// `[side, side·320/224]` before cropping.
    pub fn for_side(side: usize) -> Self {
        Self {
            crop_size: side,
            scale_range: [side, (side * 320 + 112) / 224],
            flip_prob: 0.5,
            jitter: JitterSpec::default(),
            normalization: Normalization::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let [lo, hi] = self.scale_range;
        if self.crop_size == 0 || lo > hi || self.crop_size > lo {
            return Err(SamplingError::Config(format!(
                "crop_size {} must be positive and at most the smallest scaled short side {lo} (scale_range {:?})",
                self.crop_size, self.scale_range
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(SamplingError::Config(format!(
                "flip_prob {} outside [0,1]",
                self.flip_prob
            )));
        }
        self.jitter.validate()?;
        self.normalization
            .validate()
            .map_err(|e| SamplingError::Config(e.to_string()))
    }
}

/// Composed transform for one mode.
///
/// Train: pad → duplicate jitter → short-side scale (random target) → random
/// crop → flip → normalize → sample (random offset).
/// Eval: pad → short-side scale → centre crop → normalize → sample (centred).
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub mode: SampleMode,
    pub sampler: SamplerConfig,
    pub spec: TransformSpec,
}

pub fn build_pipeline(
    mode: SampleMode,
    sampler: &SamplerConfig,
    spec: &TransformSpec,
) -> Result<Pipeline, SamplingError> {
    sampler.validate()?;
    spec.validate()?;
    Ok(Pipeline {
        mode,
        sampler: *sampler,
        spec: spec.clone(),
    })
}

impl Pipeline {
    pub fn steps(&self) -> &'static [&'static str] {
        match self.mode {
            SampleMode::Train => &[
                "temporal_pad",
                "duplicate_jitter",
                "short_side_scale",
                "random_crop",
                "horizontal_flip",
                "normalize",
                "sample",
            ],
            SampleMode::Eval => &[
                "temporal_pad",
                "short_side_scale",
                "center_crop",
                "normalize",
                "sample",
            ],
        }
    }

    /// Transforms one clip into `N × crop × crop × C` network input.
    ///
    /// Every step except sampling acts frame by frame with clip-wide
    /// parameters, so the sampled frames are picked first and only they are
    /// transformed.
    pub fn apply(&self, clip: &ClipTensor, seed: u64) -> Result<ClipTensor, SamplingError> {
        let t = clip.num_frames();
        let padded = t.max(self.sampler.window());
        let picks = uniform_sample_indices(
            padded,
            &self.sampler,
            self.mode,
            derive(seed, &["sample"]),
        );
        let sources: Vec<usize> = picks.iter().map(|&p| p.min(t - 1)).collect();
        let flags = picks
            .iter()
            .map(|&p| p >= t || clip.dup_flags[p])
            .collect();
        let mut out = clip.select(&sources, flags)?;

        let spec = &self.spec;
        match self.mode {
            SampleMode::Train => {
                if spec.jitter.enabled {
                    spec.jitter.validate()?;
                    let dims = (out.height(), out.width(), out.channels());
                    let n = out.frame_len();
                    let jseed = derive(seed, &["duplicate_jitter"]);
                    let flags = out.dup_flags.clone();
                    for ((frame, &p), dup) in out.frames.data_mut().chunks_mut(n).zip(&picks).zip(flags) {
                        if dup {
                            jitter_frame(frame, dims, &spec.jitter, frame_seed(jseed, p));
                        }
                    }
                }
                let [lo, hi] = spec.scale_range;
                let target = crate::seed::rng(derive(seed, &["scale"])).gen_range(lo..=hi);
                out = short_side_scale(&out, target)?;
                out = random_crop(&out, spec.crop_size, derive(seed, &["crop"]))?;
                if flip_decision(spec.flip_prob, derive(seed, &["flip"])) {
                    out = flip_clip(&out);
                }
            }
            SampleMode::Eval => {
                out = short_side_scale(&out, spec.crop_size)?;
                out = center_crop(&out, spec.crop_size)?;
            }
        }
        spec.normalization.apply(&mut out);
        Ok(out)
    }
}
