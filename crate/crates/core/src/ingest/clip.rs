use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GlossAnnotation, IngestError};
use crate::tensor::Tensor;

/// Frames per second as an exact positive rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRate(Ratio<u32>);

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Result<Self, IngestError> {
        if num == 0 || den == 0 {
            return Err(IngestError::Format(format!(
                "frame rate {num}/{den} must be positive"
            )));
        }
        Ok(Self(Ratio::new(num, den)))
    }

    pub fn whole(fps: u32) -> Self {
        Self::new(fps, 1).expect("positive frame rate")
    }

    pub fn numer(self) -> u32 {
        *self.0.numer()
    }

    pub fn denom(self) -> u32 {
        *self.0.denom()
    }

    pub fn as_f64(self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn ratio(self) -> Ratio<u64> {
        Ratio::new(self.numer() as u64, self.denom() as u64)
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for FrameRate {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::Format(format!("invalid frame rate {s:?}"));
        let (num, den) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Self::new(num, den)
    }
}

impl Serialize for FrameRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FrameRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Int(u32),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Int(n) => FrameRate::new(n, 1).map_err(serde::de::Error::custom),
        }
    }
}

/// A decoded clip: `[T×H×W×C]` samples plus frame rate and duplicate bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    pub frames: Tensor<f32>,
    pub fps: FrameRate,
    /// `true` for frames created by temporal upsampling or padding.
    pub dup_flags: Vec<bool>,
}

impl ClipTensor {
    pub fn new(frames: Tensor<f32>, fps: FrameRate) -> Result<Self, IngestError> {
        let t = frames.shape().first().copied().unwrap_or(0);
        Self::with_flags(frames, fps, vec![false; t])
    }

    pub fn with_flags(
        frames: Tensor<f32>,
        fps: FrameRate,
        dup_flags: Vec<bool>,
    ) -> Result<Self, IngestError> {
        if frames.ndim() != 4 {
            return Err(IngestError::Format(format!(
                "clip frames must be T×H×W×C, got {:?}",
                frames.shape()
            )));
        }
        if dup_flags.len() != frames.shape()[0] {
            return Err(IngestError::Format(format!(
                "{} dup flags for {} frames",
                dup_flags.len(),
                frames.shape()[0]
            )));
        }
        Ok(Self {
            frames,
            fps,
            dup_flags,
        })
    }

    /// Builds a clip from per-frame sample buffers of equal size.
    pub fn from_frames(
        frames: Vec<Vec<f32>>,
        dims: (usize, usize, usize),
        fps: FrameRate,
        dup_flags: Vec<bool>,
    ) -> Result<Self, IngestError> {
        let (h, w, c) = dims;
        let t = frames.len();
        let data: Vec<f32> = frames.into_iter().flatten().collect();
        let tensor = Tensor::new(vec![t, h, w, c], data)?;
        Self::with_flags(tensor, fps, dup_flags)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame_len(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames.data()[i * n..(i + 1) * n]
    }

    /// New clip made of the given source frame indices (repeats allowed).
    pub fn select(&self, indices: &[usize], dup_flags: Vec<bool>) -> Result<Self, IngestError> {
        let frames = indices.iter().map(|&i| self.frame(i).to_vec()).collect();
        Self::from_frames(
            frames,
            (self.height(), self.width(), self.channels()),
            self.fps,
            dup_flags,
        )
    }
}

/// Cuts the annotated gloss segment `start..=end` out of a full video.
pub fn extract_clip(video: &ClipTensor, ann: &GlossAnnotation) -> Result<ClipTensor, IngestError> {
    let t = video.num_frames();
    if ann.end_frame >= t || ann.start_frame > ann.end_frame {
        return Err(IngestError::Bounds {
            video_id: ann.video_id.clone(),
            start: ann.start_frame,
            end: ann.end_frame,
            frames: t,
        });
    }
    let idx: Vec<usize> = (ann.start_frame..=ann.end_frame).collect();
    let flags = idx.iter().map(|&i| video.dup_flags[i]).collect();
    video.select(&idx, flags)
}
