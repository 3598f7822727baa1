//! Desk-scale dual-stream gaze transformer: pyramid features, token
//! aggregation, camera-pose fusion and a tri-plane zone branch, trained with
//! hand-derived gradients.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod train;

use thiserror::Error;

pub use config::{LossWeights, ModelConfig, Preset};
pub use model::{Forward, GazeModel, Labels, Outputs, Sample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    ShapeMismatch(#[from] cabingaze_core::raster::RasterError),
    #[error("label missing: {0}")]
    LabelMissing(&'static str),
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    DivergenceDetected { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Synth(#[from] cabingaze_core::synthcab::SynthError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
