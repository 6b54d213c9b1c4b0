use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spatial::flip_frame;
use super::SamplingError;
use crate::ingest::ClipTensor;

/// Perturbation applied to frames created by frame-rate upsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    pub enabled: bool,
    pub flip_prob: f64,
    /// Zoom factor range around the frame centre.
    pub scale_range: [f64; 2],
    /// Largest translation in pixels along each axis.
    pub max_shift: usize,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            scale_range: [0.9, 1.1],
            max_shift: 4,
        }
    }
}

impl JitterSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(SamplingError::Config(format!(
                "jitter flip_prob {} outside [0,1]",
                self.flip_prob
            )));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SamplingError::Config(format!(
                "jitter scale_range {:?} must be positive and ordered",
                self.scale_range
            )));
        }
        Ok(())
    }
}

/// Flip, zoom and shift one `H×W×C` frame, resampling back to `H×W`.
pub(crate) fn jitter_frame(
    frame: &mut [f32],
    (h, w, c): (usize, usize, usize),
    spec: &JitterSpec,
    seed: u64,
) {
    let mut rng = crate::seed::rng(seed);
    let flip = rng.gen_bool(spec.flip_prob);
    let [lo, hi] = spec.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let shift = spec.max_shift as i64;
    let dy = rng.gen_range(-shift..=shift) as f64;
    let dx = rng.gen_range(-shift..=shift) as f64;
    if flip {
        flip_frame(frame, w, c);
    }
    let src = frame.to_vec();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let sample = |pos: f64, n: usize| -> (usize, usize, f32) {
        let p = pos.clamp(0.0, (n - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, (p - lo as f64) as f32)
    };
    for y in 0..h {
        let (y0, y1, fy) = sample((y as f64 - cy) / scale + cy + dy, h);
        for x in 0..w {
            let (x0, x1, fx) = sample((x as f64 - cx) / scale + cx + dx, w);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                frame[(y * w + x) * c + ch] = top + (bottom - top) * fy;
            }
        }
    }
}

/// Seed for the jitter of frame `index` of a clip.
pub(crate) fn frame_seed(seed: u64, index: usize) -> u64 {
    crate::seed::derive_n(seed, &["jitter"], index as u64)
}

/// Perturbs every duplicate-flagged frame independently; other frames are
/// returned untouched.
pub fn duplicate_jitter(
    clip: &ClipTensor,
    spec: &JitterSpec,
    seed: u64,
) -> Result<ClipTensor, SamplingError> {
    spec.validate()?;
    let mut out = clip.clone();
    if !spec.enabled {
        return Ok(out);
    }
    let dims = (clip.height(), clip.width(), clip.channels());
    let n = clip.frame_len();
    for (i, frame) in out.frames.data_mut().chunks_mut(n).enumerate() {
        if clip.dup_flags[i] {
            jitter_frame(frame, dims, spec, frame_seed(seed, i));
        }
    }
    Ok(out)
}
