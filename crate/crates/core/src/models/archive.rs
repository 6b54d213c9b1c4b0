//! Named-tensor archive: `SGNW`, a little-endian `u16` version, a `u64`
//! header length, a JSON header listing `(name, shape, dtype, offset)` plus
//! free-form metadata, then the concatenated little-endian payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, VideoModel};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"SGNW";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// Decoded archive with every tensor widened or narrowed to `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub meta: serde_json::Value,
}

pub fn encode_archive<'a, T: Float>(
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    meta: &serde_json::Value,
) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            dtype: T::DTYPE.to_owned(),
            offset: payload.len(),
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        meta: meta.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(14 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

fn read_values<T: Float>(bytes: &[u8], dtype: &str) -> Result<Vec<T>, ModelError> {
    match dtype {
        "f32" => Ok(bytes.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect()),
        "f64" => Ok(bytes.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect()),
        other => Err(ModelError::Format(format!("unsupported dtype {other:?}"))),
    }
}

pub fn decode_archive<T: Float>(bytes: &[u8]) -> Result<Archive<T>, ModelError> {
    let bad = |m: &str| ModelError::Format(m.to_owned());
    if bytes.len() < 14 || &bytes[..4] != MAGIC {
        return Err(bad("not a weight archive"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported archive version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let body = &bytes[14..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| ModelError::Format(e.to_string()))?;
    let payload = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_end = 0;
    for e in header.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(ModelError::Format(format!("unsupported dtype {other:?}"))),
        };
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * width;
        if e.offset != expected_end || end > payload.len() {
            return Err(ModelError::Format(format!("tensor {:?} has a bad offset", e.name)));
        }
        expected_end = end;
        let data = read_values(&payload[e.offset..end], &e.dtype)?;
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    if expected_end != payload.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Archive {
        tensors,
        meta: header.meta,
    })
}

pub fn write_archive<'a, T: Float>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    meta: &serde_json::Value,
) -> Result<(), ModelError> {
    std::fs::write(path, encode_archive(tensors, meta)).map_err(|e| ModelError::io(path, e))
}

pub fn read_archive<T: Float>(path: &Path) -> Result<Archive<T>, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
    decode_archive(&bytes)
}

impl<T: Float> VideoModel<T> {
    /// Writes the weights with the config under `meta.config` and `extra`
    /// merged into `meta`.
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let mut meta = serde_json::json!({ "config": self.config });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra) {
            m.extend(extra);
        }
        write_archive(
            path,
            self.params.iter().map(|p| (p.name.as_str(), &p.value)),
            &meta,
        )
    }

    /// Reads a model written by [`VideoModel::save`], returning its metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), ModelError> {
        let archive = read_archive::<T>(path)?;
        let config: ModelConfig = serde_json::from_value(
            archive
                .meta
                .get("config")
                .cloned()
                .ok_or_else(|| ModelError::Format("archive has no model config".into()))?,
        )
        .map_err(|e| ModelError::Format(format!("model config: {e}")))?;
        let model = Self::from_named(config, archive.tensors)?;
        Ok((model, archive.meta))
    }
}
