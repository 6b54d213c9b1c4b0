use serde::{Deserialize, Serialize};

use super::{ClipTensor, IngestError};
use crate::tensor::Tensor;

/// Per-channel standardization `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics, as used by Kinetics-pretrained video models.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(IngestError::Format(format!(
                "normalization std must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }

    pub fn apply(&self, clip: &mut ClipTensor) {
        let c = clip.channels();
        for (i, x) in clip.frames.data_mut().iter_mut().enumerate() {
            let ch = (i % c).min(2);
            *x = (*x - self.mean[ch]) / self.std[ch];
        }
    }
}

/// Bilinear resize of one `H×W×C` frame with aligned corners.
pub fn resize_frame(
    src: &[f32],
    (h, w, c): (usize, usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f32> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out[(y * out_w + x) * c + ch] = top + (bottom - top) * fy;
            }
        }
    }
    out
}

/// Resizes every frame of a clip to `out_h × out_w`.
pub fn resize_clip(clip: &ClipTensor, out_h: usize, out_w: usize) -> Result<ClipTensor, IngestError> {
    if out_h == 0 || out_w == 0 {
        return Err(IngestError::Format("resize target must be positive".into()));
    }
    let dims = (clip.height(), clip.width(), clip.channels());
    if (dims.0, dims.1) == (out_h, out_w) {
        return Ok(clip.clone());
    }
    let mut data = Vec::with_capacity(clip.num_frames() * out_h * out_w * dims.2);
    for t in 0..clip.num_frames() {
        data.extend(resize_frame(clip.frame(t), dims, (out_h, out_w)));
    }
    let frames = Tensor::new(vec![clip.num_frames(), out_h, out_w, dims.2], data)?;
    ClipTensor::with_flags(frames, clip.fps, clip.dup_flags.clone())
}

/// Resizes to `side × side` and standardizes each channel.
pub fn resize_normalize(
    clip: &ClipTensor,
    side: usize,
    norm: &Normalization,
) -> Result<ClipTensor, IngestError> {
    norm.validate()?;
    let mut out = resize_clip(clip, side, side)?;
    norm.apply(&mut out);
    Ok(out)
}
