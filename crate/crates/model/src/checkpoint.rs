//! Checkpoints: `checkpoint.json` (header) next to `checkpoint.bin`
//! (parameters as little-endian f64).

use std::fs;
use std::path::Path;

use cabingaze_core::triplane::TriPlaneConfig;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Preset};
use crate::model::GazeModel;
use crate::ModelError;

pub const HEADER_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "checkpoint.bin";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub preset: Option<Preset>,
    pub seed: u64,
    pub model: ModelConfig,
    pub triplane: TriPlaneConfig,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &GazeModel, params: Vec<f64>, preset: Option<Preset>, seed: u64) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                preset,
                seed,
                model: model.cfg.clone(),
                triplane: model.triplane,
                param_count: params.len(),
            },
            params,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let header = serde_json::to_string_pretty(&self.header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(dir.join(HEADER_FILE), header + "\n")?;
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(dir.join(HEADER_FILE))?;
        let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported format version {}", header.format_version)));
        }
        let bytes = fs::read(dir.join(PARAMS_FILE))?;
        if bytes.len() != header.param_count * 8 {
            return Err(ModelError::Checkpoint(format!(
                "{} holds {} bytes, header promises {} parameters",
                PARAMS_FILE,
                bytes.len(),
                header.param_count
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self { header, params })
    }

    /// Rebuilds the model and checks the parameter count against it.
    pub fn model(&self) -> Result<GazeModel, ModelError> {
        let m = GazeModel::new(&self.header.model, &self.header.triplane)?;
        if m.param_count() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "model needs {} parameters, checkpoint has {}",
                m.param_count(),
                self.params.len()
            )));
        }
        Ok(m)
    }
}
