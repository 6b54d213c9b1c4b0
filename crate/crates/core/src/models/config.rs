use serde::{Deserialize, Serialize};

use super::{AttentionVariant, GridDims, ModelError};
use crate::tensor::ops::GeluVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "videomae")]
    VideoMae,
    Vivit,
    Timesformer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::VideoMae, Family::Vivit, Family::Timesformer];

    pub fn name(self) -> &'static str {
        match self {
            Family::VideoMae => "videomae",
            Family::Vivit => "vivit",
            Family::Timesformer => "timesformer",
        }
    }

    /// Attention variants the family supports.
    pub fn variants(self) -> &'static [AttentionVariant] {
        use AttentionVariant::*;
        match self {
            Family::VideoMae => &[JointSpaceTime],
            Family::Vivit => &[
                JointSpaceTime,
                FactorizedEncoder,
                FactorizedSelfAttn,
                FactorizedDotProduct,
            ],
            Family::Timesformer => &[Spatial, JointSpaceTime, DividedSpaceTime, Axial],
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown model family {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Cls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub image_size: usize,
    /// Spatial patch side used by per-frame patch embedding.
    pub patch_size: usize,
    /// Cube extent `(t, h, w)` used by tubelet embedding.
    pub tubelet: [usize; 3],
    pub num_frames: usize,
    pub channels: usize,
    pub layers: usize,
    /// Temporal encoder depth of the factorized-encoder variant.
    pub temporal_layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub activation: GeluVariant,
    pub pooling: Pooling,
    pub attention: AttentionVariant,
    pub num_classes: usize,
    pub decoder: Option<DecoderConfig>,
    pub mask_ratio: f64,
    pub init_range: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Full-size geometry of the family's reference checkpoint.
    pub fn reference(family: Family, num_classes: usize) -> Self {
        let base = Self {
            family,
            image_size: 224,
            patch_size: 16,
            tubelet: [2, 16, 16],
            num_frames: 16,
            channels: 3,
            layers: 12,
            temporal_layers: 4,
            heads: 12,
            hidden: 768,
            intermediate: 3072,
            activation: GeluVariant::Exact,
            pooling: Pooling::Mean,
            attention: AttentionVariant::JointSpaceTime,
            num_classes,
            decoder: None,
            mask_ratio: 0.9,
            init_range: 0.02,
            layer_norm_eps: 1e-6,
        };
        match family {
            Family::VideoMae => Self {
                decoder: Some(DecoderConfig {
                    hidden: 384,
                    intermediate: 1536,
                    heads: 6,
                    layers: 4,
                }),
                ..base
            },
            Family::Vivit => Self {
                num_frames: 32,
                activation: GeluVariant::Fast,
                pooling: Pooling::Cls,
                ..base
            },
            Family::Timesformer => Self {
                num_frames: 8,
                tubelet: [1, 16, 16],
                pooling: Pooling::Cls,
                attention: AttentionVariant::DividedSpaceTime,
                ..base
            },
        }
    }

    /// Small geometry for tests and CPU runs: 32² frames, patch 8, 4 frames,
    /// tubelet (2,8,8), d=32, 2 layers, 2 heads.
    pub fn toy(family: Family, num_classes: usize) -> Self {
        let reference = Self::reference(family, num_classes);
        let tubelet = match family {
            Family::Timesformer => [1, 8, 8],
            _ => [2, 8, 8],
        };
        Self {
            image_size: 32,
            patch_size: 8,
            tubelet,
            num_frames: 4,
            layers: 2,
            temporal_layers: 1,
            heads: 2,
            hidden: 32,
            intermediate: 64,
            decoder: reference.decoder.map(|_| DecoderConfig {
                hidden: 16,
                intermediate: 32,
                heads: 2,
                layers: 1,
            }),
            ..reference
        }
    }

    /// Extent `(t, h, w)` of one embedded token: per-frame patches for
    /// TimeSformer, cubes otherwise.
    pub fn token_extent(&self) -> [usize; 3] {
        match self.family {
            Family::Timesformer => [1, self.patch_size, self.patch_size],
            _ => self.tubelet,
        }
    }

    pub fn grid(&self) -> GridDims {
        let [t, h, w] = self.token_extent();
        GridDims {
            t: self.num_frames / t,
            h: self.image_size / h,
            w: self.image_size / w,
        }
    }

    pub fn has_cls(&self) -> bool {
        self.pooling == Pooling::Cls
    }

    /// Values per embedded token.
    pub fn token_dim(&self) -> usize {
        let [t, h, w] = self.token_extent();
        t * h * w * self.channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let [t, h, w] = self.token_extent();
        if [t, h, w, self.image_size, self.num_frames, self.channels].contains(&0) {
            return err("sizes must be positive".into());
        }
        if self.image_size % h != 0 || self.image_size % w != 0 {
            return err(format!(
                "image_size {} is not divisible by the patch extent {h}×{w}",
                self.image_size
            ));
        }
        if self.num_frames % t != 0 {
            return err(format!(
                "num_frames {} is not divisible by the temporal extent {t}",
                self.num_frames
            ));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return err(format!(
                "hidden {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return err(format!("mask_ratio {} outside [0,1)", self.mask_ratio));
        }
        if !self.family.variants().contains(&self.attention) {
            return err(format!(
                "{} does not support {} attention",
                self.family.name(),
                self.attention.name()
            ));
        }
        if self.attention.is_factorized() && self.has_cls() {
            return err(format!(
                "{} attention does not use a class token; set pooling = \"mean\"",
                self.attention.name()
            ));
        }
        if self.attention == AttentionVariant::FactorizedDotProduct && self.heads < 2 {
            return err("factorized_dotproduct needs at least 2 heads".into());
        }
        if self.attention == AttentionVariant::FactorizedEncoder && self.temporal_layers == 0 {
            return err("factorized_encoder needs temporal_layers ≥ 1".into());
        }
        if let Some(d) = &self.decoder {
            if self.family != Family::VideoMae {
                return err("only videomae has a reconstruction decoder".into());
            }
            if d.heads == 0 || d.hidden % d.heads != 0 {
                return err(format!(
                    "decoder hidden {} is not divisible by {} heads",
                    d.hidden, d.heads
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for f in Family::ALL {
            ModelConfig::reference(f, 60).validate().unwrap();
            ModelConfig::toy(f, 5).validate().unwrap();
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut c = ModelConfig::toy(Family::VideoMae, 3);
        c.num_frames = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(Family::VideoMae, 3);
        c.image_size = 36;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(Family::VideoMae, 3);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(Family::VideoMae, 3);
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_family_pairing() {
        let mut c = ModelConfig::toy(Family::VideoMae, 3);
        c.attention = AttentionVariant::DividedSpaceTime;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(Family::Vivit, 3);
        c.attention = AttentionVariant::FactorizedSelfAttn;
        assert!(c.validate().is_err(), "cls pooling with a factorization");
        c.pooling = Pooling::Mean;
        c.validate().unwrap();
    }

    #[test]
    fn config_serde_roundtrip() {
        let c = ModelConfig::toy(Family::Vivit, 4);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"vivit\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), c);
        assert!(serde_json::to_string(&Family::VideoMae).unwrap().contains("videomae"));
    }
}
