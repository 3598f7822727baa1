use std::path::Path;

use cabingaze_core::annotate::{build_record, RecordIds};
use cabingaze_core::calib::{transfer_point, CalibrationFile};
use cabingaze_core::geom::Vec3;

use crate::error::CliError;
use crate::io::{read_json, read_jsonl, resolve, save_records, Capture, TargetFrame};

/// Keeps an image path valid when the records land in another directory.
fn rebase(from: &Path, to: &Path, rel: &str) -> String {
    let same_dir = from.parent().map(|p| p.canonicalize().ok()) == to.parent().map(|p| p.canonicalize().ok());
    if same_dir || Path::new(rel).is_absolute() {
        return rel.to_owned();
    }
    let abs = resolve(from, rel);
    abs.canonicalize().unwrap_or(abs).to_string_lossy().into_owned()
}

pub fn run(captures: &Path, calibration: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let caps: Vec<Capture> = read_jsonl(captures)?;
    if caps.is_empty() {
        return Err(CliError::Data(format!("{}: no captures", captures.display())));
    }
    let calib = calibration
        .map(|p| read_json::<CalibrationFile>(p).and_then(|f| Ok(f.calibration()?)))
        .transpose()?;
    let mut records = Vec::with_capacity(caps.len());
    for (i, c) in caps.into_iter().enumerate() {
        let t = Vec3::from(c.target);
        let t_dms = match c.target_frame {
            TargetFrame::Dms => t,
            TargetFrame::Depth => {
                let cal = calib.as_ref().ok_or_else(|| {
                    CliError::Config(format!("capture {} has a depth-frame target; pass --calibration", i + 1))
                })?;
                transfer_point(cal, &t)
            }
        };
        let ids = RecordIds { subject_id: c.subject_id, camera_id: c.camera_id, target_id: c.target_id };
        let landmarks = c.landmarks.into_iter().map(Vec3::from).collect();
        let mut rec = build_record(&Vec3::from(c.face_center), &t_dms, c.zone.name(), landmarks, c.posture, ids)?;
        rec.image = c.image.map(|rel| rebase(captures, out, &rel));
        records.push(rec);
    }
    save_records(out, &records)?;
    Ok(format!("annotated {} records -> {}\n", records.len(), out.display()))
}
