use std::path::Path;

use cabingaze_core::annotate::Zone;
use cabingaze_core::geom::Vec3;
use cabingaze_core::metrics::{range_bins_svg, EvalInput, EvalReport};
use cabingaze_core::synthcab::head_rotation_from_landmarks;
use cabingaze_model::checkpoint::Checkpoint;
use cabingaze_model::model::ZoneTerm;
use serde::{Deserialize, Serialize};

use crate::commands::train::load_samples;
use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{load_records, read_jsonl, write_json, write_jsonl, write_text};

/// One prediction line: original-space gaze and, optionally, a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub gaze: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<Zone>,
}

/// Writes `eval.json`, `eval.txt`, `gaze_bins.svg`, `head_bins.svg` and,
/// for checkpoints, `predictions.jsonl`.
pub fn run(
    cfg: &PipelineConfig,
    dataset: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    out: &Path,
) -> Result<String, CliError> {
    let (records, preds) = match (checkpoint, predictions) {
        (Some(dir), _) => {
            let ck = Checkpoint::load(dir)?;
            let model = ck.model()?;
            let (records, samples) = load_samples(dataset, &model.cfg)?;
            let mut preds = Vec::with_capacity(samples.len());
            for s in &samples {
                let o = model.forward(&ck.params, s)?.outputs;
                preds.push(Prediction { gaze: o.gaze_o.into(), zone: Some(o.zone_prediction(ZoneTerm::Fused)) });
            }
            write_jsonl(&out.join("predictions.jsonl"), &preds)?;
            (records, preds)
        }
        (None, Some(p)) => (load_records(dataset)?, read_jsonl::<Prediction>(p)?),
        (None, None) => return Err(CliError::Config("pass --checkpoint or --predictions".into())),
    };
    if preds.len() != records.len() {
        return Err(CliError::Data(format!("{} predictions for {} records", preds.len(), records.len())));
    }
    let predicted = preds
        .iter()
        .map(|p| {
            let v = Vec3::from(p.gaze);
            let n = v.norm();
            if n > 0.0 && n.is_finite() {
                Ok(v / n)
            } else {
                Err(CliError::Data("prediction with zero or non-finite gaze".into()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<Vec3> = records.iter().map(|r| r.gaze.vector()).collect();
    let heads = records
        .iter()
        .map(|r| Ok(head_rotation_from_landmarks(&r.landmarks())?.apply(&-Vec3::z())))
        .collect::<Result<Vec<_>, CliError>>();
    let pred_zones: Option<Vec<Zone>> = preds.iter().map(|p| p.zone).collect();
    let true_zones: Vec<Zone> = records.iter().map(|r| r.zone).collect();
    let report = EvalReport::compute(
        &EvalInput {
            predicted: &predicted,
            truth: &truth,
            zones: pred_zones.as_deref().map(|p| (p, true_zones.as_slice())),
            head_dirs: heads.as_deref().ok(),
        },
        &cfg.metrics,
    )?;
    write_report(&report, out)?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(report.to_table())
}

/// Table and charts for a report.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<(), CliError> {
    write_text(&out.join("eval.txt"), &report.to_table())?;
    write_text(&out.join("gaze_bins.svg"), &range_bins_svg(&report.gaze_bins, "Mean error by gaze angle from frontal"))?;
    if let Some(h) = &report.head_bins {
        write_text(&out.join("head_bins.svg"), &range_bins_svg(h, "Mean error by head angle from frontal"))?;
    }
    Ok(())
}
