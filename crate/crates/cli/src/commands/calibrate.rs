use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use cabingaze_core::calib::{average_calibrations, calibrate_two_sided, CalibrationFile, CornerObservations};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::write_json;

fn read_corners(path: &Path) -> Result<CornerObservations, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(CornerObservations::read_jsonl(BufReader::new(f))?)
}

/// Calibrates every `board_NN_dms.jsonl` / `board_NN_depth.jsonl` pair in
/// `corners` and averages the results.
pub fn run(cfg: &PipelineConfig, corners: &Path, out: &Path) -> Result<String, CliError> {
    let mut stems: Vec<String> = std::fs::read_dir(corners)
        .map_err(|e| CliError::io(corners, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_dms.jsonl")).map(str::to_owned))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::Data(format!("{}: no *_dms.jsonl corner files", corners.display())));
    }
    let mut calibs = Vec::with_capacity(stems.len());
    let mut sq = 0.0;
    for stem in &stems {
        let dms = read_corners(&corners.join(format!("{stem}_dms.jsonl")))?;
        let depth = read_corners(&corners.join(format!("{stem}_depth.jsonl")))?;
        let r = calibrate_two_sided(
            &dms,
            &cfg.cameras.dms,
            &depth,
            &cfg.cameras.depth,
            &cfg.calibration.board,
            cfg.calibration.mirror,
        )?;
        sq += r.residual_px * r.residual_px;
        calibs.push(r.calibration);
    }
    let avg = average_calibrations(&calibs)?;
    let file = CalibrationFile {
        r_rot: std::array::from_fn(|i| std::array::from_fn(|j| avg.rot.rotation.matrix()[(i, j)])),
        t_rot: avg.rot.translation.into(),
        residual_px: (sq / calibs.len() as f64).sqrt(),
    };
    write_json(out, &file)?;
    Ok(format!(
        "calibrated from {} placements, residual {:.4} px -> {}\n",
        calibs.len(),
        file.residual_px,
        out.display()
    ))
}
