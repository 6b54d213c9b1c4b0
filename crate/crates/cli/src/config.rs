use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use signlab::ingest::{FrameRate, SampleFormat};
use signlab::models::{Family, ModelConfig};
use signlab::sampling::{SamplerConfig, TransformSpec};
use signlab::seed::derive;
use signlab::splits::SplitStrategy;
use signlab::train::{SynthConfig, TrainConfig};

/// Failures that map to dedicated exit codes.
#[derive(Debug)]
pub enum Failure {
    Missing(PathBuf),
    Config(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Missing(p) => write!(f, "missing artifact: {}", p.display()),
            Failure::Config(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Failure::Config(msg.into()).into()
}

/// Fails with a missing-artifact error unless `path` exists.
pub fn require(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Missing(path.to_path_buf()).into())
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum StoredFormat {
    #[default]
    U8,
    F32,
}

impl From<StoredFormat> for SampleFormat {
    fn from(f: StoredFormat) -> Self {
        match f {
            StoredFormat::U8 => SampleFormat::U8,
            StoredFormat::F32 => SampleFormat::F32,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset name used in reports.
    pub name: Option<String>,
    pub annotations: Option<PathBuf>,
    /// Directory of raw `{video_id}.sgnf` videos.
    pub videos: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    /// Frame rate every clip is resampled to on ingest.
    pub target_fps: Option<FrameRate>,
    #[serde(default)]
    pub sample_format: StoredFormat,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Toy,
    Reference,
}

/// A preset geometry plus per-field overrides of [`ModelConfig`].
#[derive(Clone, Debug, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default)]
    pub preset: Preset,
    pub name: Option<String>,
    #[serde(flatten)]
    pub overrides: BTreeMap<String, serde_json::Value>,
}

fn default_family() -> Family {
    Family::VideoMae
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: default_family(),
            preset: Preset::Toy,
            name: None,
            overrides: BTreeMap::new(),
        }
    }
}

impl ModelSection {
    pub fn build(&self, num_classes: usize) -> anyhow::Result<ModelConfig> {
        let base = match self.preset {
            Preset::Toy => ModelConfig::toy(self.family, num_classes),
            Preset::Reference => ModelConfig::reference(self.family, num_classes),
        };
        let mut value = serde_json::to_value(&base)?;
        let fields = value.as_object_mut().expect("config is an object");
        for (key, v) in &self.overrides {
            if key == "num_classes" || !fields.contains_key(key) {
                return Err(config_err(format!("model.{key}: unknown or fixed field")));
            }
            fields.insert(key.clone(), v.clone());
        }
        let cfg: ModelConfig =
            serde_json::from_value(value).map_err(|e| config_err(format!("model: {e}")))?;
        cfg.validate().map_err(|e| config_err(format!("model: {e}")))?;
        Ok(cfg)
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.family.name().to_string())
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Confusion table shows only the first `window` classes.
    pub window: Option<usize>,
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig {
        num_frames: 4,
        sample_rate: 2,
        fps: FrameRate::whole(30),
    }
}

fn default_transform() -> TransformSpec {
    TransformSpec::for_side(32)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default = "default_transform")]
    pub transform: TransformSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub split: Option<SplitStrategy>,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

/// A run configuration with the mandatory fields resolved.
#[derive(Clone, Debug)]
pub struct Run {
    pub seed: u64,
    pub out: PathBuf,
    pub cfg: RunConfig,
}

impl Run {
    pub fn manifest_path(&self) -> PathBuf {
        self.cfg.data.manifest.clone().unwrap_or_else(|| self.out.join("manifest.jsonl"))
    }

    pub fn plan_path(&self) -> PathBuf {
        self.cfg.data.plan.clone().unwrap_or_else(|| self.out.join("split.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoint.sgnw")
    }

    pub fn dataset_name(&self) -> String {
        self.cfg.data.name.clone().unwrap_or_else(|| "dataset".into())
    }

    /// Seed for one component, derived from the master seed.
    pub fn seed_for(&self, component: &str) -> u64 {
        derive(self.seed, &[component])
    }
}

/// Sets `a.b.c = value` in a TOML table; the value is parsed as TOML and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set {assignment:?}: expected key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("--set {assignment:?}: empty key segment")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("--set {key}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

pub fn load(
    path: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    overrides: &[String],
) -> anyhow::Result<Run> {
    let mut table = match path {
        Some(p) => {
            require(p)?;
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let text = toml::to_string(&table)?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
    let seed = seed
        .or(cfg.seed)
        .ok_or_else(|| config_err("seed: a master seed is required (`seed` key or --seed)"))?;
    let out = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| config_err("out: an output directory is required (`out` key or --out)"))?;
    cfg.sampler.validate().map_err(|e| config_err(format!("sampler: {e}")))?;
    cfg.train.validate().map_err(|e| config_err(format!("train: {e}")))?;
    Ok(Run { seed, out, cfg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.learning_rate=0.001").unwrap();
        apply_override(&mut t, "data.name = synth").unwrap();
        apply_override(&mut t, "seed=3").unwrap();
        assert_eq!(t["train"]["learning_rate"].as_float(), Some(0.001));
        assert_eq!(t["data"]["name"].as_str(), Some("synth"));
        assert_eq!(t["seed"].as_integer(), Some(3));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "seed.x=1").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let err = load(None, None, Some("o".into()), &[]).unwrap_err();
        assert!(err.to_string().contains("seed"));
        assert!(load(None, Some(1), Some("o".into()), &[]).is_ok());
    }

    #[test]
    fn field_names_in_errors() {
        let err = load(None, Some(1), Some("o".into()), &["train.epochs=0".into()]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        let err = load(None, Some(1), Some("o".into()), &["train.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let run = load(None, Some(1), Some("o".into()), &["model.hidden=7".into()]).unwrap();
        assert!(run.cfg.model.build(3).is_err());
        let run = load(None, Some(1), Some("o".into()), &["model.hidden=16".into()]).unwrap();
        assert_eq!(run.cfg.model.build(3).unwrap().hidden, 16);
    }
}
