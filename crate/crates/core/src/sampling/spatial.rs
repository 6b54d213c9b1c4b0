use rand::Rng;

use super::SamplingError;
use crate::ingest::{resize_clip, ClipTensor};
use crate::tensor::Tensor;

/// Output size when scaling the short side to `target`; the long side keeps
/// the aspect ratio, truncated to whole pixels.
pub fn short_side_dims(h: usize, w: usize, target: usize) -> (usize, usize) {
    if h <= w {
        (target, (w * target / h).max(1))
    } else {
        ((h * target / w).max(1), target)
    }
}

pub fn short_side_scale(clip: &ClipTensor, target: usize) -> Result<ClipTensor, SamplingError> {
    if target == 0 {
        return Err(SamplingError::Config("short side target must be positive".into()));
    }
    let (h, w) = short_side_dims(clip.height(), clip.width(), target);
    Ok(resize_clip(clip, h, w)?)
}

/// Crops the same `size × size` window from every frame.
pub fn crop_at(clip: &ClipTensor, top: usize, left: usize, size: usize) -> Result<ClipTensor, SamplingError> {
    let (h, w, c) = (clip.height(), clip.width(), clip.channels());
    if size == 0 || top + size > h || left + size > w {
        return Err(SamplingError::Crop {
            size,
            height: h,
            width: w,
        });
    }
    if (size, size) == (h, w) {
        return Ok(clip.clone());
    }
    let mut data = Vec::with_capacity(clip.num_frames() * size * size * c);
    for t in 0..clip.num_frames() {
        let f = clip.frame(t);
        for y in top..top + size {
            let start = (y * w + left) * c;
            data.extend_from_slice(&f[start..start + size * c]);
        }
    }
    let frames = Tensor::new(vec![clip.num_frames(), size, size, c], data)?;
    Ok(ClipTensor::with_flags(frames, clip.fps, clip.dup_flags.clone())?)
}

fn check_crop(clip: &ClipTensor, size: usize) -> Result<(), SamplingError> {
    if size == 0 || size > clip.height() || size > clip.width() {
        return Err(SamplingError::Crop {
            size,
            height: clip.height(),
            width: clip.width(),
        });
    }
    Ok(())
}

pub fn random_crop(clip: &ClipTensor, size: usize, seed: u64) -> Result<ClipTensor, SamplingError> {
    check_crop(clip, size)?;
    let mut rng = crate::seed::rng(seed);
    let top = rng.gen_range(0..=clip.height() - size);
    let left = rng.gen_range(0..=clip.width() - size);
    crop_at(clip, top, left, size)
}

pub fn center_crop(clip: &ClipTensor, size: usize) -> Result<ClipTensor, SamplingError> {
    check_crop(clip, size)?;
    crop_at(clip, (clip.height() - size) / 2, (clip.width() - size) / 2, size)
}

/// Mirrors one `H×W×C` frame left to right in place.
pub fn flip_frame(frame: &mut [f32], w: usize, c: usize) {
    for row in frame.chunks_mut(w * c) {
        for x in 0..w / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (w - 1 - x) * c + ch);
            }
        }
    }
}

/// Mirrors every frame of the clip.
pub fn flip_clip(clip: &ClipTensor) -> ClipTensor {
    let mut out = clip.clone();
    let (w, c, n) = (clip.width(), clip.channels(), clip.frame_len());
    for frame in out.frames.data_mut().chunks_mut(n) {
        flip_frame(frame, w, c);
    }
    out
}

/// Decides once per clip, with probability `p`, whether to mirror all frames.
pub fn flip_decision(p: f64, seed: u64) -> bool {
    crate::seed::rng(seed).gen_bool(p.clamp(0.0, 1.0))
}

pub fn horizontal_flip(clip: &ClipTensor, p: f64, seed: u64) -> ClipTensor {
    if flip_decision(p, seed) {
        flip_clip(clip)
    } else {
        clip.clone()
    }
}
