//! The single pipeline config file. Every section is optional; missing
//! sections and fields take the documented defaults.

use std::path::Path;

use cabingaze_core::calib::BoardSpec;
use cabingaze_core::metrics::MetricsConfig;
use cabingaze_core::normalize::NormalizationConfig;
use cabingaze_core::synthcab::{CabinLayout, CameraPair, DatasetSpec, RenderOptions};
use cabingaze_core::triplane::TriPlaneConfig;
use cabingaze_model::data::normalization_for;
use cabingaze_model::train::TrainConfig;
use cabingaze_model::{ModelConfig, Preset};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub board: BoardSpec,
    /// Board printed mirrored (back side seen as the un-mirrored pattern).
    pub mirror: bool,
    /// Corner noise used by `simulate`, pixels.
    pub noise_px: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let layout = CabinLayout::default();
        Self { board: layout.board, mirror: layout.mirror, noise_px: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub layout: CabinLayout,
    pub dataset: DatasetSpec,
    pub render: RenderOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub cameras: CameraPair,
    pub calibration: CalibrationSection,
    pub normalization: NormalizationConfig,
    pub triplane: TriPlaneConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub metrics: MetricsConfig,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cameras: CameraPair::default(),
            calibration: CalibrationSection::default(),
            normalization: normalization_for(Preset::Tiny),
            triplane: TriPlaneConfig::default(),
            model: ModelConfig::preset(Preset::Tiny),
            training: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Replaces the model dimensions and the matching normalization output
    /// size with a preset. `d_norm` and the method are kept.
    pub fn apply_preset(&mut self, preset: Preset) {
        self.model = ModelConfig::preset(preset);
        self.normalization = NormalizationConfig {
            d_norm: self.normalization.d_norm,
            method: self.normalization.method,
            ..normalization_for(preset)
        };
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| CliError::Config(m);
        self.normalization.validate().map_err(|e| cfg(format!("normalization: {e}")))?;
        self.triplane.validate().map_err(|e| cfg(format!("triplane: {e}")))?;
        self.model.validate().map_err(|e| cfg(format!("model: {e}")))?;
        self.training.validate().map_err(|e| cfg(format!("training: {e}")))?;
        self.metrics.validate().map_err(|e| cfg(format!("metrics: {e}")))?;
        self.synth.layout.validate().map_err(|e| cfg(format!("synth.layout: {e}")))?;
        if self.synth.dataset.subjects == 0 || self.synth.dataset.frames == 0 {
            return Err(cfg("synth.dataset: subjects and frames must be positive".into()));
        }
        if !(self.calibration.noise_px >= 0.0 && self.calibration.noise_px.is_finite()) {
            return Err(cfg("calibration.noise_px must be finite and non-negative".into()));
        }
        if self.synth.layout.board != self.calibration.board || self.synth.layout.mirror != self.calibration.mirror {
            return Err(cfg("synth.layout.board/mirror must match calibration.board/mirror".into()));
        }
        let (w, h) = (self.normalization.out_width as usize, self.normalization.out_height as usize);
        if (w, h) != (self.model.image_width, self.model.image_height) {
            return Err(cfg(format!(
                "normalization output {w}x{h} differs from model input {}x{}",
                self.model.image_width, self.model.image_height
            )));
        }
        Ok(())
    }
}
