use serde::{Deserialize, Serialize};

use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Desk-scale model used by the tests and the default pipeline.
    Tiny,
    /// Full-size dimensions (224×224 input, width 128, six-layer transformers).
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected tiny or paper)")),
        }
    }
}

/// Per-term switches for the loss. Gaze terms are ordered as in
/// [`crate::model::GazeTerm::ALL`], zone terms as positional, visual, fused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gaze: f64,
    pub zone: f64,
    pub gaze_mask: [bool; 11],
    pub zone_mask: [bool; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gaze: 1.0,
            zone: 1.0,
            gaze_mask: [true; 11],
            zone_mask: [true; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub stream_layers: usize,
    pub fusion_layers: usize,
    pub positional_layers: usize,
    pub zone_layers: usize,
    pub head_hidden: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Frequency bands of the camera-pose encoding.
    pub pose_bands: usize,
    /// Learnable per-level embeddings added before aggregation.
    pub level_embeddings: bool,
    pub loss: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Tiny)
    }
}

/// Pooling strides of the four pyramid levels.
pub const LEVEL_STRIDES: [usize; 4] = [2, 4, 8, 16];

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self {
                width: 32,
                heads: 2,
                stream_layers: 2,
                fusion_layers: 2,
                positional_layers: 2,
                zone_layers: 2,
                head_hidden: 32,
                image_width: 32,
                image_height: 32,
                pose_bands: 4,
                level_embeddings: true,
                loss: LossWeights::default(),
            },
            Preset::Paper => Self {
                width: 128,
                heads: 8,
                stream_layers: 6,
                fusion_layers: 6,
                positional_layers: 2,
                zone_layers: 6,
                head_hidden: 128,
                image_width: 224,
                image_height: 224,
                pose_bands: 4,
                level_embeddings: true,
                loss: LossWeights::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} must be a positive multiple of heads {}", self.width, self.heads));
        }
        if self.head_hidden == 0 || self.pose_bands == 0 {
            return bad("head_hidden and pose_bands must be positive".into());
        }
        let s = LEVEL_STRIDES[3];
        if self.image_width == 0 || self.image_height == 0 || self.image_width % s != 0 || self.image_height % s != 0 {
            return bad(format!(
                "image size {}x{} must be a positive multiple of {s}",
                self.image_width, self.image_height
            ));
        }
        if !(self.loss.gaze >= 0.0 && self.loss.zone >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn level_grid(&self, level: usize) -> usize {
        let s = LEVEL_STRIDES[level];
        (self.image_width / s) * (self.image_height / s)
    }
}
