use std::path::Path;

use cabingaze_core::annotate::SampleRecord;
use cabingaze_core::raster::Raster;
use cabingaze_core::triplane::TriPlaneConfig;
use cabingaze_model::checkpoint::Checkpoint;
use cabingaze_model::data::labels_for;
use cabingaze_model::train::fit;
use cabingaze_model::{GazeModel, ModelConfig, Preset, Sample};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{load_records, resolve, write_json};

fn load_image(dataset: &Path, rel: &str, model: &ModelConfig) -> Result<Raster, CliError> {
    let path = resolve(dataset, rel);
    let img = Raster::load_pgm(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    img.ensure_shape(model.image_width, model.image_height)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(img)
}

/// Records of a normalized dataset and their model samples.
pub fn load_samples(dataset: &Path, model: &ModelConfig) -> Result<(Vec<SampleRecord>, Vec<Sample>), CliError> {
    let records = load_records(dataset)?;
    let mut samples = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let missing = |what: &str| CliError::Data(format!("record {} has no {what}; run `normalize` first", i + 1));
        let n = r.normalization.as_ref().ok_or_else(|| missing("normalization"))?;
        let original = load_image(dataset, r.image.as_deref().ok_or_else(|| missing("image"))?, model)?;
        let normalized = load_image(dataset, n.image.as_deref().ok_or_else(|| missing("normalized image"))?, model)?;
        samples.push(Sample {
            labels: labels_for(r, &n.rotation),
            original,
            normalized,
            rotation: n.rotation,
            face_center: r.face_center(),
        });
    }
    Ok((records, samples))
}

pub fn build_model(model: &ModelConfig, triplane: &TriPlaneConfig) -> Result<GazeModel, CliError> {
    Ok(GazeModel::new(model, triplane)?)
}

/// Writes `checkpoint.json`, `checkpoint.bin` and `curve.json`.
pub fn run(cfg: &PipelineConfig, preset: Option<Preset>, dataset: &Path, out: &Path) -> Result<String, CliError> {
    let (_, samples) = load_samples(dataset, &cfg.model)?;
    let model = build_model(&cfg.model, &cfg.triplane)?;
    let mut params = model.init_params(cfg.seed);
    let training = cabingaze_model::train::TrainConfig { seed: cfg.seed, ..cfg.training.clone() };
    let curve = fit(&model, &samples, &mut params, &training)?;
    Checkpoint::new(&model, params, preset, cfg.seed).save(out)?;
    write_json(&out.join("curve.json"), &curve)?;
    let mut text = String::from("epoch        loss  error(deg)\n");
    for e in &curve.epochs {
        text += &format!("{:>5} {:>11.5} {:>11.3}\n", e.epoch, e.loss, e.mean_error_deg);
    }
    Ok(text)
}
