//! Raw clip container.
//!
//! Little-endian layout:
//!
//! ```text
//! "SGNF" | version u16 | T H W C u32 | fps num, den u32 | dtype u8 | T dup-flag bytes | payload
//! ```
//!
//! dtype 0 stores `u8` samples (`[0,1]` scaled to `[0,255]`); dtype 1 stores
//! `f32` samples verbatim.

use std::fs;
use std::path::Path;

use super::{ClipTensor, FrameRate, IngestError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGNF";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 4 * 2 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    U8,
    F32,
}

impl SampleFormat {
    fn tag(self) -> u8 {
        match self {
            SampleFormat::U8 => 0,
            SampleFormat::F32 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, IngestError> {
        match tag {
            0 => Ok(SampleFormat::U8),
            1 => Ok(SampleFormat::F32),
            t => Err(IngestError::Format(format!("unknown dtype tag {t}"))),
        }
    }

    fn bytes(self) -> usize {
        match self {
            SampleFormat::U8 => 1,
            SampleFormat::F32 => 4,
        }
    }
}

/// Quantizes a `[0,1]` sample to the u8 container encoding.
pub fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_clip(clip: &ClipTensor, format: SampleFormat) -> Vec<u8> {
    let n = clip.frames.len();
    let mut out = Vec::with_capacity(HEADER_LEN + clip.num_frames() + n * format.bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in clip.frames.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    out.extend_from_slice(&clip.fps.numer().to_le_bytes());
    out.extend_from_slice(&clip.fps.denom().to_le_bytes());
    out.push(format.tag());
    out.extend(clip.dup_flags.iter().map(|&d| d as u8));
    match format {
        SampleFormat::U8 => out.extend(clip.frames.data().iter().map(|&x| quantize(x))),
        SampleFormat::F32 => {
            for &x in clip.frames.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<ClipTensor, IngestError> {
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(IngestError::Format("bad magic, expected SGNF".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != VERSION {
        return Err(IngestError::Format(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(6 + 4 * i) as usize).collect();
    let fps = FrameRate::new(u32_at(22), u32_at(26))?;
    let format = SampleFormat::from_tag(bytes[30])?;
    if dims.contains(&0) {
        return Err(IngestError::Format(format!("zero extent in {dims:?}")));
    }
    let t = dims[0];
    let samples = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IngestError::Format(format!("dimensions {dims:?} overflow")))?;
    let expected = HEADER_LEN + t + samples * format.bytes();
    if bytes.len() != expected {
        return Err(IngestError::Format(format!(
            "payload length mismatch: header {dims:?} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let flags = &bytes[HEADER_LEN..HEADER_LEN + t];
    if let Some(b) = flags.iter().find(|&&b| b > 1) {
        return Err(IngestError::Format(format!("invalid dup flag byte {b}")));
    }
    let dup_flags = flags.iter().map(|&b| b == 1).collect();
    let payload = &bytes[HEADER_LEN + t..];
    let data: Vec<f32> = match format {
        SampleFormat::U8 => payload.iter().map(|&b| b as f32 / 255.0).collect(),
        SampleFormat::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect(),
    };
    ClipTensor::with_flags(Tensor::new(dims, data)?, fps, dup_flags)
}

pub fn write_clip(path: &Path, clip: &ClipTensor, format: SampleFormat) -> Result<(), IngestError> {
    fs::write(path, encode_clip(clip, format)).map_err(|e| IngestError::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<ClipTensor, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_clip(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(dims: [usize; 4], seed: u64) -> ClipTensor {
        let mut s = seed;
        let frames = Tensor::from_fn(dims.to_vec(), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % 256) as f32 / 255.0
        });
        let flags = (0..dims[0]).map(|i| i % 3 == 1).collect();
        ClipTensor::with_flags(frames, FrameRate::new(30000, 1001).unwrap(), flags).unwrap()
    }

    #[test]
    fn header_fixes_payload_length() {
        let c = clip([2, 4, 4, 3], 1);
        let bytes = encode_clip(&c, SampleFormat::U8);
        assert_eq!(bytes.len(), HEADER_LEN + 2 + 96);
        assert_eq!(&bytes[..4], b"SGNF");
        assert!(decode_clip(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_clip(&longer).is_err());
    }

    #[test]
    fn rejects_bad_magic_and_truncated_header() {
        let mut bytes = encode_clip(&clip([1, 1, 1, 3], 2), SampleFormat::U8);
        assert!(decode_clip(&bytes[..10]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode_clip(&bytes), Err(IngestError::Format(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.sgnf");
        let c = clip([3, 5, 7, 3], 3);
        write_clip(&path, &c, SampleFormat::U8).unwrap();
        assert_eq!(read_clip(&path).unwrap(), c);
        assert!(matches!(
            read_clip(&dir.path().join("missing.sgnf")),
            Err(IngestError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn lossless_for_all_shapes(t in 1usize..5, h in 1usize..6, w in 1usize..6, c in 1usize..4, seed: u64) {
            let clip = clip([t, h, w, c], seed);
            let bytes = encode_clip(&clip, SampleFormat::U8);
            let back = decode_clip(&bytes).unwrap();
            prop_assert_eq!(&back, &clip);
            prop_assert_eq!(encode_clip(&back, SampleFormat::U8), bytes);
            let raw = encode_clip(&clip, SampleFormat::F32);
            prop_assert_eq!(decode_clip(&raw).unwrap(), clip);
        }
    }
}
