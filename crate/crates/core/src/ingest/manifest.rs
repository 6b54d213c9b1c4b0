use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameRate, IngestError};

/// One ingested clip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path of the clip container, relative to the manifest file.
    pub clip_path: String,
    pub gloss_label: String,
    pub signer_id: String,
    pub frame_count: usize,
    pub fps: FrameRate,
}

impl ManifestRecord {
    /// File stem of `clip_path`; unique within a manifest.
    pub fn clip_id(&self) -> &str {
        let name = self.clip_path.rsplit(['/', '\\']).next().unwrap_or(&self.clip_path);
        name.strip_suffix(".sgnf").unwrap_or(name)
    }
}

/// Dataset catalog. Class indices are the positions of the distinct labels in
/// sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ClipManifest {
    pub records: Vec<ManifestRecord>,
    pub label_map: BTreeMap<String, usize>,
}

impl ClipManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        let labels: BTreeSet<&str> = records.iter().map(|r| r.gloss_label.as_str()).collect();
        let label_map = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l.to_string(), i))
            .collect();
        Self { records, label_map }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn class_of(&self, record: &ManifestRecord) -> usize {
        self.label_map[&record.gloss_label]
    }

    /// Labels ordered by class index.
    pub fn labels(&self) -> Vec<String> {
        self.label_map.keys().cloned().collect()
    }

    /// Keeps matching records; classes left without samples are dropped from
    /// the label map (with a warning) and the remaining classes re-indexed.
    pub fn filter(&self, keep: impl Fn(&ManifestRecord) -> bool) -> Self {
        let out = Self::new(self.records.iter().filter(|r| keep(r)).cloned().collect());
        for label in self.label_map.keys() {
            if !out.label_map.contains_key(label) {
                log::warn!("class {label:?} has no samples after filtering; dropped");
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, IngestError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| IngestError::Parse {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self::new(records))
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| IngestError::io(path, e))
    }

    /// Absolute location of a record's clip for a manifest stored at `manifest_path`.
    pub fn resolve(manifest_path: &Path, record: &ManifestRecord) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&record.clip_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, label: &str) -> ManifestRecord {
        ManifestRecord {
            clip_path: path.into(),
            gloss_label: label.into(),
            signer_id: "U1".into(),
            frame_count: 10,
            fps: FrameRate::whole(30),
        }
    }

    #[test]
    fn label_map_is_sorted_and_dense() {
        let m = ClipManifest::new(vec![rec("c/a.sgnf", "zeta"), rec("c/b.sgnf", "alpha"), rec("c/c.sgnf", "zeta")]);
        assert_eq!(m.labels(), vec!["alpha", "zeta"]);
        assert_eq!(m.class_of(&m.records[0]), 1);
        assert_eq!(m.records[1].clip_id(), "b");
    }

    #[test]
    fn filter_drops_empty_classes() {
        let m = ClipManifest::new(vec![rec("a", "x"), rec("b", "y"), rec("c", "z")]);
        let f = m.filter(|r| r.gloss_label != "y");
        assert_eq!(f.labels(), vec!["x", "z"]);
        assert_eq!(f.class_of(&f.records[1]), 1);
    }

    #[test]
    fn jsonl_roundtrip() {
        let m = ClipManifest::new(vec![rec("clips/a.sgnf", "x"), rec("clips/b.sgnf", "y")]);
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"fps\":\"30\""));
        assert_eq!(ClipManifest::from_jsonl(&text).unwrap(), m);
        assert!(ClipManifest::from_jsonl("{\"clip_path\": 3}\n").is_err());
    }
}
