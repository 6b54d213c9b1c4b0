use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use signlab::eval::{comparison_table, emit_report, read_metrics, EmitOptions, EvalReport};
use signlab::ingest::{
    extract_clip, frc_resample, parse_annotations, read_clip, write_annotations, write_clip,
    ClipManifest, ClipTensor, GlossAnnotation, ManifestRecord,
};
use signlab::models::VideoModel;
use signlab::sampling::{SamplerConfig, TransformSpec};
use signlab::splits::{build_plan, verify_no_leakage, Role, SplitPlan};
use signlab::train::{evaluate, loss_curve_csv, synth_dataset, train_loop, LabeledClip};

use crate::config::{config_err, require, Run};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(run: &Run) -> Result<()> {
    let data = synth_dataset(&run.cfg.synth, run.seed_for("synth"))?;
    let videos = run.out.join("videos");
    create_dir(&videos)?;
    for (id, clip) in &data.videos {
        write_clip(&videos.join(format!("{id}.sgnf")), clip, run.cfg.data.sample_format.into())?;
    }
    let annotations = run.out.join("annotations.json");
    write(&annotations, write_annotations(&data.annotations))?;
    info!(
        "wrote {} videos and {} annotations under {}",
        data.videos.len(),
        data.annotations.len(),
        run.out.display()
    );
    println!("annotations: {}", annotations.display());
    println!("videos: {}", videos.display());
    Ok(())
}

fn ingest_one(
    ann: &GlossAnnotation,
    videos: &Path,
    cache: &mut BTreeMap<String, ClipTensor>,
    run: &Run,
) -> Result<ClipTensor> {
    if !cache.contains_key(&ann.video_id) {
        let path = videos.join(format!("{}.sgnf", ann.video_id));
        require(&path)?;
        cache.insert(ann.video_id.clone(), read_clip(&path)?);
    }
    let mut clip = extract_clip(&cache[&ann.video_id], ann)?;
    if let Some(fps) = run.cfg.data.target_fps {
        clip = frc_resample(&clip, fps)?;
    }
    Ok(clip)
}

pub fn ingest(run: &Run, annotations: Option<PathBuf>, videos: Option<PathBuf>) -> Result<()> {
    let annotations = annotations
        .or_else(|| run.cfg.data.annotations.clone())
        .unwrap_or_else(|| run.out.join("annotations.json"));
    let videos = videos
        .or_else(|| run.cfg.data.videos.clone())
        .unwrap_or_else(|| run.out.join("videos"));
    require(&annotations)?;
    let text = fs::read_to_string(&annotations)?;
    let anns = parse_annotations(&text).with_context(|| annotations.display().to_string())?;

    let clips_dir = run.out.join("clips");
    create_dir(&clips_dir)?;
    let mut cache = BTreeMap::new();
    let mut records = Vec::new();
    let mut failures = 0;
    for ann in &anns {
        let id = ann.clip_id();
        match ingest_one(ann, &videos, &mut cache, run) {
            Ok(clip) => {
                let rel = format!("clips/{id}.sgnf");
                write_clip(&run.out.join(&rel), &clip, run.cfg.data.sample_format.into())?;
                records.push(ManifestRecord {
                    clip_path: rel,
                    gloss_label: ann.gloss_label.clone(),
                    signer_id: ann.signer_id.clone(),
                    frame_count: clip.num_frames(),
                    fps: clip.fps,
                });
            }
            Err(e) => {
                warn!("clip {id}: {e:#}");
                failures += 1;
            }
        }
    }
    records.sort_by(|a, b| a.clip_path.cmp(&b.clip_path));
    let manifest = ClipManifest::new(records);
    let path = run.out.join("manifest.jsonl");
    manifest.write(&path)?;

    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &manifest.records {
        *hist.entry(r.frame_count).or_default() += 1;
    }
    let mut table = String::from("frame_count,clips\n");
    for (frames, n) in &hist {
        table.push_str(&format!("{frames},{n}\n"));
    }
    write(&run.out.join("frame_counts.csv"), &table)?;
    println!(
        "ingested {} clips in {} classes into {}",
        manifest.len(),
        manifest.num_classes(),
        path.display()
    );
    print!("{table}");
    if failures > 0 {
        bail!("{failures} of {} clips failed to ingest", anns.len());
    }
    Ok(())
}

fn read_manifest(run: &Run) -> Result<(PathBuf, ClipManifest)> {
    let path = run.manifest_path();
    require(&path)?;
    let manifest = ClipManifest::read(&path)?;
    Ok((path, manifest))
}

pub fn split(run: &Run, manifest: Option<PathBuf>) -> Result<()> {
    let path = manifest.unwrap_or_else(|| run.manifest_path());
    require(&path)?;
    let manifest = ClipManifest::read(&path)?;
    let strategy = run
        .cfg
        .split
        .clone()
        .ok_or_else(|| config_err("split: no split strategy configured"))?;
    let plan = build_plan(&manifest, &strategy)?;
    let report = verify_no_leakage(&plan, &manifest);
    if !report.is_clean() {
        bail!("split plan leaks: {report}");
    }
    create_dir(&run.out)?;
    let out = run.plan_path();
    plan.write(&out)?;
    println!("wrote {} assignments to {}", plan.entries.len(), out.display());
    print!("{report}");
    Ok(())
}

/// Clip ids selected by a role name (`train`, `val`, `test`) or a fold.
fn select<'a>(plan: &'a SplitPlan, role: &str, fold: Option<usize>) -> Result<Vec<&'a str>> {
    if plan.num_folds() > 0 && role != "test" {
        let i = fold.unwrap_or(0);
        let (train, held) = plan
            .cv_fold(i)
            .ok_or_else(|| config_err(format!("fold: {i} is out of range for {} folds", plan.num_folds())))?;
        return Ok(if role == "train" { train } else { held });
    }
    let role = match role {
        "train" => Role::Train,
        "val" => Role::Val,
        "test" => Role::Test,
        other => return Err(config_err(format!("role: unknown role {other:?}"))),
    };
    Ok(plan.clips(role))
}

fn load_clips(
    manifest_path: &Path,
    manifest: &ClipManifest,
    labels: &[String],
    ids: &[&str],
) -> Result<Vec<LabeledClip>> {
    let by_id: BTreeMap<&str, &ManifestRecord> =
        manifest.records.iter().map(|r| (r.clip_id(), r)).collect();
    ids.iter()
        .map(|id| {
            let r = by_id
                .get(id)
                .ok_or_else(|| anyhow!("clip {id} is in the split plan but not the manifest"))?;
            let path = ClipManifest::resolve(manifest_path, r);
            require(&path)?;
            let label = labels
                .iter()
                .position(|l| *l == r.gloss_label)
                .ok_or_else(|| anyhow!("clip {id}: label {:?} unknown to the model", r.gloss_label))?;
            Ok(LabeledClip {
                id: id.to_string(),
                clip: read_clip(&path)?,
                label,
            })
        })
        .collect()
}

fn read_plan(run: &Run) -> Result<SplitPlan> {
    let path = run.plan_path();
    require(&path)?;
    Ok(SplitPlan::read(&path)?)
}

pub fn train(run: &Run, fold: Option<usize>) -> Result<()> {
    let (manifest_path, manifest) = read_manifest(run)?;
    let plan = read_plan(run)?;
    let labels = manifest.labels();
    let train_ids = select(&plan, "train", fold)?;
    let val_ids = select(&plan, "val", fold)?;
    if train_ids.is_empty() {
        bail!("the split plan assigns no clips to training");
    }
    let train_set = load_clips(&manifest_path, &manifest, &labels, &train_ids)?;
    let val_set = load_clips(&manifest_path, &manifest, &labels, &val_ids)?;
    let model_cfg = run.cfg.model.build(labels.len())?;
    let model = VideoModel::new(model_cfg, run.seed_for("model"))?;
    let mut cfg = run.cfg.train.clone();
    cfg.seed = run.seed_for("train");
    info!(
        "training {} ({} parameters) on {} clips, validating on {}",
        run.cfg.model.display_name(),
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train_loop(model, &train_set, &val_set, &cfg, &run.cfg.sampler, &run.cfg.transform)?;

    create_dir(&run.out)?;
    let meta = json!({
        "labels": labels,
        "sampler": run.cfg.sampler,
        "transform": run.cfg.transform,
        "model_name": run.cfg.model.display_name(),
        "dataset": run.dataset_name(),
        "best_epoch": outcome.best_epoch,
    });
    let ckpt = run.checkpoint_path();
    outcome.best.save(&ckpt, meta)?;
    let curve = run.out.join("loss_curve.csv");
    write(&curve, loss_curve_csv(&outcome.history))?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "epochs run: {}, best epoch: {}, stopped early: {}, final train loss: {}",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.stopped_early,
        last.train_loss
    );
    println!("checkpoint: {}", ckpt.display());
    println!("loss curve: {}", curve.display());
    Ok(())
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<Option<T>> {
    meta.get(key)
        .map(|v| serde_json::from_value(v.clone()).with_context(|| format!("checkpoint meta {key}")))
        .transpose()
}

pub fn eval(
    run: &Run,
    checkpoint: Option<PathBuf>,
    role: &str,
    fold: Option<usize>,
    window: Option<usize>,
) -> Result<()> {
    let ckpt = checkpoint.unwrap_or_else(|| run.checkpoint_path());
    require(&ckpt)?;
    let (model, meta) = VideoModel::<f32>::load(&ckpt)?;
    let (manifest_path, manifest) = read_manifest(run)?;
    let plan = read_plan(run)?;
    let labels: Vec<String> = meta_field(&meta, "labels")?.unwrap_or_else(|| manifest.labels());
    if labels.len() != model.config.num_classes {
        bail!("checkpoint has {} classes but {} labels", model.config.num_classes, labels.len());
    }
    let sampler: SamplerConfig = meta_field(&meta, "sampler")?.unwrap_or(run.cfg.sampler);
    let transform: TransformSpec =
        meta_field(&meta, "transform")?.unwrap_or_else(|| run.cfg.transform.clone());
    let ids = select(&plan, role, fold)?;
    if ids.is_empty() {
        bail!("the split plan assigns no clips to {role}");
    }
    let clips = load_clips(&manifest_path, &manifest, &labels, &ids)?;
    let result = evaluate(&model, &clips, &sampler, &transform, run.cfg.train.eval_batch_size)?;
    let rows: Vec<Vec<f64>> = result
        .logits
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let report = EvalReport::from_logits(&rows, &result.truths, labels)?;
    let name = match (role, fold) {
        ("test", _) | (_, None) => role.to_string(),
        (_, Some(i)) => format!("{role}_fold{i}"),
    };
    let dir = run.out.join("eval").join(name);
    let opts = EmitOptions {
        window: window.or(run.cfg.eval.window),
        model: Some(meta_field(&meta, "model_name")?.unwrap_or_else(|| run.cfg.model.display_name())),
        dataset: Some(meta_field(&meta, "dataset")?.unwrap_or_else(|| run.dataset_name())),
        history: None,
    };
    let paths = emit_report(&report, &dir, &opts)?;
    println!(
        "{} clips, accuracy {:.4}, macro F1 {:.4}",
        clips.len(),
        report.accuracy,
        report.macro_avg.f1
    );
    println!("metrics: {}", paths.metrics.display());
    println!("confusion: {}", paths.confusion.display());
    Ok(())
}

pub fn report(run: &Run, metrics: &[PathBuf]) -> Result<()> {
    let mut summaries = Vec::new();
    for m in metrics {
        require(m)?;
        summaries.push(read_metrics(m)?);
    }
    let (rows, table) = comparison_table(&summaries)?;
    create_dir(&run.out)?;
    let path = run.out.join("comparison.csv");
    write(&path, &table)?;
    print!("{table}");
    info!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}
