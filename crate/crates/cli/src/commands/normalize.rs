use std::path::Path;

use cabingaze_core::annotate::NormalizationInfo;
use cabingaze_core::normalize::{normalize_sample, warp_with_homography, NormalizationMethod};
use cabingaze_core::raster::Raster;
use cabingaze_core::synthcab::{crop_intrinsics, head_rotation_from_landmarks};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{ensure_parent, load_records, resolve, save_records};
use crate::ImageSource;

/// Writes `images/original/` (copies), `images/normalized/` and a
/// `dataset.jsonl` whose records carry their normalization.
pub fn run(cfg: &PipelineConfig, dataset: &Path, source: ImageSource, out: &Path) -> Result<String, CliError> {
    let mut records = load_records(dataset)?;
    let norm = &cfg.normalization;
    let (w, h) = (norm.out_width as usize, norm.out_height as usize);
    for (i, rec) in records.iter_mut().enumerate() {
        let o = rec.face_center();
        let head = match norm.method {
            NormalizationMethod::Legacy => Some(head_rotation_from_landmarks(&rec.landmarks())?),
            NormalizationMethod::Ours => None,
        };
        let n = normalize_sample(&o, &cfg.cameras.dms, Some(&rec.gaze), head.as_ref(), norm)?;
        let homography = match source {
            ImageSource::Full => n.homography,
            ImageSource::Crop => {
                let k_inv = crop_intrinsics(&o, norm)
                    .try_inverse()
                    .ok_or_else(|| CliError::Numerical("singular crop intrinsics".into()))?;
                n.virtual_camera.k_matrix() * n.scale * n.rotation.matrix() * k_inv
            }
        };
        let image = rec
            .image
            .as_deref()
            .ok_or_else(|| CliError::Data(format!("record {} has no image", i + 1)))?;
        let src_path = resolve(dataset, image);
        let img = Raster::load_pgm(&src_path).map_err(|e| CliError::Data(format!("{}: {e}", src_path.display())))?;
        if source == ImageSource::Full {
            img.ensure_shape(cfg.cameras.dms.width as usize, cfg.cameras.dms.height as usize)?;
        }
        let warped = warp_with_homography(&img, &homography, w, h)?;

        let orig_rel = format!("images/original/{i:05}.pgm");
        let norm_rel = format!("images/normalized/{i:05}.pgm");
        ensure_parent(&out.join(&orig_rel))?;
        std::fs::copy(&src_path, out.join(&orig_rel)).map_err(|e| CliError::io(&src_path, e))?;
        ensure_parent(&out.join(&norm_rel))?;
        warped.save_pgm(out.join(&norm_rel))?;
        rec.image = Some(orig_rel);
        rec.normalization = Some(NormalizationInfo {
            rotation: n.rotation,
            scale: n.scale[(2, 2)],
            gaze: n.gaze.expect("gaze was supplied"),
            image: Some(norm_rel),
        });
    }
    save_records(&out.join("dataset.jsonl"), &records)?;
    Ok(format!("normalized {} records -> {}\n", records.len(), out.display()))
}
