use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{Float, Tensor, Var};

/// Token counts along time, height and width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl GridDims {
    /// Grid of a `frames × height × width` clip cut into `extent` cubes.
    pub fn of(frames: usize, height: usize, width: usize, extent: [usize; 3]) -> Self {
        Self {
            t: frames / extent[0],
            h: height / extent[1],
            w: width / extent[2],
        }
    }

    /// Tokens per temporal index.
    pub fn patches(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Embedded tokens on a tape: `[(cls) + t·h·w] × d`, t-major, class token
/// first when present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub tokens: Var,
    pub dims: GridDims,
    pub cls: bool,
}

impl TokenGrid {
    pub fn num_tokens(&self) -> usize {
        usize::from(self.cls) + self.dims.len()
    }
}

/// Cuts `[T×H×W×C]` frames into `extent` cubes, one row per cube in t-major
/// grid order, each cube flattened as `(dt, dy, dx, c)`.
pub fn patchify<T: Float>(frames: &Tensor<T>, extent: [usize; 3]) -> Result<Tensor<T>, ModelError> {
    let &[nf, height, width, c] = frames.shape() else {
        return Err(ModelError::Config(format!(
            "expected [T×H×W×C] frames, got {:?}",
            frames.shape()
        )));
    };
    let [et, eh, ew] = extent;
    if et == 0 || eh == 0 || ew == 0 || nf % et != 0 || height % eh != 0 || width % ew != 0 {
        return Err(ModelError::Config(format!(
            "{nf}×{height}×{width} frames are not divisible into {et}×{eh}×{ew} cubes"
        )));
    }
    let dims = GridDims::of(nf, height, width, extent);
    let cube = et * eh * ew * c;
    let src = frames.data();
    let mut out = Vec::with_capacity(dims.len() * cube);
    for gt in 0..dims.t {
        for gh in 0..dims.h {
            for gw in 0..dims.w {
                for dt in 0..et {
                    for dy in 0..eh {
                        let (f, y, x0) = (gt * et + dt, gh * eh + dy, gw * ew);
                        let start = ((f * height + y) * width + x0) * c;
                        out.extend_from_slice(&src[start..start + ew * c]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![dims.len(), cube], out)?)
}
