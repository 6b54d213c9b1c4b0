use serde::{Deserialize, Serialize};

use super::IngestError;

/// One gloss segment of a source video. Frame indices are inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossAnnotation {
    pub video_id: String,
    pub gloss_label: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub signer_id: String,
}

impl GlossAnnotation {
    pub fn validate(&self, index: usize) -> Result<(), IngestError> {
        let fail = |message: String| IngestError::Validation {
            index,
            video_id: self.video_id.clone(),
            message,
        };
        if self.gloss_label.trim().is_empty() {
            return Err(fail("gloss_label is empty".into()));
        }
        if self.start_frame > self.end_frame {
            return Err(fail(format!(
                "start_frame {} is after end_frame {}",
                self.start_frame, self.end_frame
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    /// Stable name of the extracted clip: `<video>_<start>_<end>`.
    pub fn clip_id(&self) -> String {
        format!("{}_{:06}_{:06}", self.video_id, self.start_frame, self.end_frame)
    }
}

/// Parses a top-level JSON array of annotation objects, preserving order.
pub fn parse_annotations(document: &str) -> Result<Vec<GlossAnnotation>, IngestError> {
    let records: Vec<GlossAnnotation> =
        serde_json::from_str(document).map_err(|e| IngestError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    for (i, r) in records.iter().enumerate() {
        r.validate(i)?;
    }
    Ok(records)
}

pub fn write_annotations(records: &[GlossAnnotation]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("annotations serialize");
    s.push('\n');
    s
}
