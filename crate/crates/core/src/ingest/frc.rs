use super::{ClipTensor, FrameRate, IngestError};

/// Source frame for every output frame of an upsampled clip:
/// `⌊i · fps / target⌋`, for `round(T · target / fps)` output frames.
///
/// When that count would leave the last source frame unreferenced (possible
/// for ratios such as 24→25), one more output frame is emitted so every source
/// frame survives.
pub fn frc_source_indices(
    frames: usize,
    fps: FrameRate,
    target: FrameRate,
) -> Result<Vec<usize>, IngestError> {
    if target < fps {
        return Err(IngestError::UnsupportedDownsample { from: fps, to: target });
    }
    // ratio = fps / target ≤ 1, as num/den
    let ratio = fps.ratio() / target.ratio();
    let (num, den) = (*ratio.numer(), *ratio.denom());
    let t = frames as u64;
    // round-half-up of t·den/num
    let mut out_len = (2 * t * den + num) / (2 * num);
    let src = |i: u64| (i * num / den) as usize;
    if out_len > 0 && src(out_len - 1) + 1 < frames {
        out_len += 1;
    }
    Ok((0..out_len).map(|i| src(i).min(frames - 1)).collect())
}

/// Nearest-neighbour temporal upsampling to `target` fps. Output frames that
/// repeat the previous source frame are flagged as duplicates.
pub fn frc_resample(clip: &ClipTensor, target: FrameRate) -> Result<ClipTensor, IngestError> {
    let idx = frc_source_indices(clip.num_frames(), clip.fps, target)?;
    let flags = idx
        .iter()
        .enumerate()
        .map(|(i, &s)| (i > 0 && idx[i - 1] == s) || clip.dup_flags[s])
        .collect();
    let mut out = clip.select(&idx, flags)?;
    out.fps = target;
    Ok(out)
}
