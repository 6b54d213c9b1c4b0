//! Synthetic signing videos: a Gaussian blob sweeping a half-circle arc whose
//! starting phase depends on the class. Signers differ in framing, blob size,
//! brightness and tint. Classes are separable from vertical motion alone, so
//! horizontal flips preserve the label.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledClip;
use crate::ingest::{
    extract_clip, frc_resample, ClipManifest, ClipTensor, FrameRate, GlossAnnotation,
    IngestError, ManifestRecord,
};
use crate::seed::{derive, derive_n, rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub signers: usize,
    pub height: usize,
    pub width: usize,
    /// Frames per gloss at the source rate.
    pub gloss_frames: usize,
    /// Rest frames before every gloss.
    pub idle_frames: usize,
    pub fps: FrameRate,
    /// Amplitude of uniform pixel noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 16,
            signers: 4,
            height: 36,
            width: 48,
            gloss_frames: 10,
            idle_frames: 3,
            fps: FrameRate::whole(30),
            noise: 0.03,
        }
    }
}

/// Raw videos (one per signer) and the gloss annotations that cut them.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub videos: Vec<(String, ClipTensor)>,
    pub annotations: Vec<GlossAnnotation>,
}

pub fn gloss_name(class: usize) -> String {
    format!("sign{class:02}")
}

pub fn signer_name(signer: usize) -> String {
    format!("U{}", signer + 1)
}

struct Signer {
    dy: f64,
    dx: f64,
    radius: f64,
    sigma: f64,
    background: f64,
    tint: [f64; 3],
}

impl Signer {
    fn sample(seed: u64, s: usize) -> Self {
        let mut r = rng(derive_n(seed, &["synth", "signer"], s as u64));
        Self {
            dy: r.gen_range(-0.06..0.06),
            dx: r.gen_range(-0.08..0.08),
            radius: r.gen_range(0.26..0.34),
            sigma: r.gen_range(0.09..0.13),
            background: r.gen_range(0.1..0.3),
            tint: [r.gen_range(0.7..1.0), r.gen_range(0.7..1.0), r.gen_range(0.7..1.0)],
        }
    }
}

/// Renders one frame with the blob at `(y, x)` in units of the short side,
/// relative to the frame centre.
fn render(cfg: &SynthConfig, who: &Signer, y: f64, x: f64, noise: &mut impl Rng, out: &mut Vec<f32>) {
    let short = cfg.height.min(cfg.width) as f64;
    let (cy, cx) = (
        (cfg.height as f64 - 1.0) / 2.0 + (y + who.dy) * short,
        (cfg.width as f64 - 1.0) / 2.0 + (x + who.dx) * short,
    );
    let inv = 1.0 / (2.0 * (who.sigma * short).powi(2));
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let blob = (-d2 * inv).exp();
            for ch in 0..3 {
                let v = who.background + (1.0 - who.background) * blob * who.tint[ch]
                    + noise.gen_range(-cfg.noise..=cfg.noise);
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
}

/// Generates `classes × per_class` glosses spread over `signers` videos.
/// Clip `j` of every class goes to signer `j mod signers`.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset, IngestError> {
    if cfg.classes < 2 || cfg.per_class == 0 || cfg.signers == 0 || cfg.gloss_frames < 2 {
        return Err(IngestError::Format(
            "synthetic data needs ≥2 classes, ≥1 clip per class, ≥1 signer and ≥2 frames per gloss".into(),
        ));
    }
    let mut videos = Vec::new();
    let mut annotations = Vec::new();
    for s in 0..cfg.signers {
        let who = Signer::sample(seed, s);
        let video_id = format!("video_{}", signer_name(s));
        let mut noise = rng(derive_n(seed, &["synth", "noise"], s as u64));
        let mut data = Vec::new();
        let mut frames = 0;
        for class in 0..cfg.classes {
            for j in (s..cfg.per_class).step_by(cfg.signers) {
                let mut r = rng(derive(seed, &["synth", "clip", &class.to_string(), &j.to_string()]));
                let phase = 2.0 * PI * class as f64 / cfg.classes as f64 + r.gen_range(-0.15..0.15);
                let sweep = PI * r.gen_range(0.85..1.15);
                let radius = who.radius * r.gen_range(0.9..1.1);
                // rest pose below centre
                for _ in 0..cfg.idle_frames {
                    render(cfg, &who, 0.4, 0.0, &mut noise, &mut data);
                }
                let start = frames + cfg.idle_frames;
                for f in 0..cfg.gloss_frames {
                    let a = phase + sweep * f as f64 / (cfg.gloss_frames - 1) as f64;
                    render(cfg, &who, radius * a.cos(), radius * a.sin(), &mut noise, &mut data);
                }
                frames = start + cfg.gloss_frames;
                annotations.push(GlossAnnotation {
                    video_id: video_id.clone(),
                    gloss_label: gloss_name(class),
                    start_frame: start,
                    end_frame: frames - 1,
                    signer_id: signer_name(s),
                });
            }
        }
        if frames == 0 {
            continue;
        }
        let tensor = Tensor::new(vec![frames, cfg.height, cfg.width, 3], data)?;
        videos.push((video_id, ClipTensor::new(tensor, cfg.fps)?));
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        videos,
        annotations,
    })
}

impl SynthDataset {
    pub fn video(&self, id: &str) -> Option<&ClipTensor> {
        self.videos.iter().find(|(v, _)| v == id).map(|(_, c)| c)
    }

    /// Cuts every annotated gloss, optionally resampling it to `target` fps,
    /// and returns the manifest (clip paths under `clips/`) with the clips in
    /// manifest order.
    pub fn extract(
        &self,
        target: Option<FrameRate>,
    ) -> Result<(ClipManifest, Vec<LabeledClip>), IngestError> {
        let mut records = Vec::new();
        let mut clips = Vec::new();
        for ann in &self.annotations {
            let video = self
                .video(&ann.video_id)
                .ok_or_else(|| IngestError::Format(format!("no video {:?}", ann.video_id)))?;
            let mut clip = extract_clip(video, ann)?;
            if let Some(fps) = target {
                clip = frc_resample(&clip, fps)?;
            }
            let id = ann.clip_id();
            records.push(ManifestRecord {
                clip_path: format!("clips/{id}.sgnf"),
                gloss_label: ann.gloss_label.clone(),
                signer_id: ann.signer_id.clone(),
                frame_count: clip.num_frames(),
                fps: clip.fps,
            });
            clips.push((id, clip));
        }
        let manifest = ClipManifest::new(records);
        let labeled = manifest
            .records
            .iter()
            .zip(clips)
            .map(|(r, (id, clip))| LabeledClip {
                id,
                clip,
                label: manifest.class_of(r),
            })
            .collect();
        Ok((manifest, labeled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::container::encode_clip;
    use crate::ingest::SampleFormat;
    use crate::splits::stratified_kfold;

    #[test]
    fn counts_and_folds() {
        let ds = synth_dataset(&SynthConfig::default(), 1).unwrap();
        assert_eq!(ds.annotations.len(), 64);
        let (manifest, clips) = ds.extract(None).unwrap();
        assert_eq!(clips.len(), 64);
        assert_eq!(manifest.num_classes(), 4);
        let folds = stratified_kfold(&manifest, 10, 0).unwrap();
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 64);
        assert!(clips.iter().all(|c| c.clip.num_frames() == 10));
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = SynthConfig { per_class: 4, ..SynthConfig::default() };
        let a = synth_dataset(&cfg, 7).unwrap();
        let b = synth_dataset(&cfg, 7).unwrap();
        for ((_, x), (_, y)) in a.videos.iter().zip(&b.videos) {
            assert_eq!(encode_clip(x, SampleFormat::U8), encode_clip(y, SampleFormat::U8));
        }
        assert_eq!(a.annotations, b.annotations);
        assert_ne!(a.videos[0].1, synth_dataset(&cfg, 8).unwrap().videos[0].1);
    }

    #[test]
    fn class_means_differ() {
        let (_, clips) = synth_dataset(&SynthConfig::default(), 2).unwrap().extract(None).unwrap();
        let mean = |class: usize| {
            let members: Vec<&LabeledClip> = clips.iter().filter(|c| c.label == class).collect();
            let n = members[0].clip.frames.len();
            let mut m = vec![0.0f64; n];
            for c in &members {
                for (a, &b) in m.iter_mut().zip(c.clip.frames.data()) {
                    *a += b as f64 / members.len() as f64;
                }
            }
            m
        };
        let (m0, m1) = (mean(0), mean(1));
        let l2 = m0.iter().zip(&m1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(l2 > 1.0, "ℓ2 distance {l2}");
    }

    #[test]
    fn frc_doubles_low_rate_clips() {
        let cfg = SynthConfig { fps: FrameRate::whole(15), per_class: 2, ..SynthConfig::default() };
        let (m, clips) = synth_dataset(&cfg, 3).unwrap().extract(Some(FrameRate::whole(30))).unwrap();
        assert!(m.records.iter().all(|r| r.frame_count == 20));
        assert!(clips.iter().all(|c| c.clip.dup_flags.iter().filter(|&&d| d).count() == 10));
    }
}
