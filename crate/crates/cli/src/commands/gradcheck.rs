use std::path::Path;

use cabingaze_core::synthcab::DatasetSpec;
use cabingaze_model::data::synthetic_set;
use cabingaze_model::gradcheck::{gradcheck, GradCheckConfig};

use crate::commands::train::build_model;
use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::write_json;

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Checks the analytic gradient of the configured model on two synthetic
/// samples. Fails with a numerical error when the tolerance or the
/// stop-gradient is violated.
pub fn run(cfg: &PipelineConfig, out: Option<&Path>) -> Result<String, CliError> {
    let model = build_model(&cfg.model, &cfg.triplane)?;
    let spec = DatasetSpec { subjects: 1, frames: 2, ..cfg.synth.dataset };
    let set = synthetic_set(cfg.seed, &spec, &cfg.normalization, &cfg.synth.render)?;
    let params = model.init_params(cfg.seed);
    let report = gradcheck(&model, &params, &set.samples, &GradCheckConfig { seed: cfg.seed, ..Default::default() })?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))? + "\n";
    let summary = format!(
        "checked {} parameters, max relative error {:.3e}; stop-gradient: {} of {} blocked parameters nonzero\n",
        report.entries.len(),
        report.max_rel_error,
        report.stop_gradient.nonzero,
        report.stop_gradient.checked
    );
    let printed = match out {
        Some(p) => {
            write_json(p, &report)?;
            summary.clone()
        }
        None => text,
    };
    if !(report.max_rel_error < TOLERANCE) || report.stop_gradient.nonzero != 0 {
        return Err(CliError::Numerical(summary.trim_end().to_owned()));
    }
    Ok(printed)
}
