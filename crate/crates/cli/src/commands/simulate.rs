use std::path::Path;

use cabingaze_core::calib::CalibrationFile;
use cabingaze_core::synthcab::{crop_intrinsics, generate_cabin, generate_dataset, render_face_k, simulate_chessboard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{ensure_parent, save_records, write_json, write_jsonl, Capture, TargetFrame};

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    scene_seed: u64,
    frames: usize,
    boards: usize,
    noise_px: f64,
}

/// Corner file names for board placement `k`.
pub fn corner_files(k: usize) -> (String, String) {
    (format!("board_{k:02}_dms.jsonl"), format!("board_{k:02}_depth.jsonl"))
}

/// Writes `scene.json`, `corners/`, `calibration_truth.json`,
/// `captures.jsonl` (targets in the depth frame), `dataset.jsonl` (direct
/// DMS-frame annotation), `images/` (face crops) and `manifest.json`.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene_seed: u64 = rng.random();
    let scene = generate_cabin(scene_seed, &cfg.synth.layout, &cfg.cameras)?;
    write_json(&out.join("scene.json"), &scene)?;

    for (k, placement) in scene.boards.iter().enumerate() {
        let sim = simulate_chessboard(&scene, placement, cfg.calibration.noise_px, &mut rng)?;
        let (dms, depth) = corner_files(k);
        write_jsonl(&out.join("corners").join(dms), sim.dms_obs.as_slice())?;
        write_jsonl(&out.join("corners").join(depth), sim.depth_obs.as_slice())?;
    }
    let truth = CalibrationFile {
        r_rot: std::array::from_fn(|i| std::array::from_fn(|j| scene.depth_pose.rotation.matrix()[(i, j)])),
        t_rot: scene.depth_pose.translation.into(),
        residual_px: 0.0,
    };
    write_json(&out.join("calibration_truth.json"), &truth)?;

    let frames = generate_dataset(&scene, &cfg.synth.dataset, &mut rng)?;
    let (w, h) = (cfg.normalization.out_width as usize, cfg.normalization.out_height as usize);
    let mut records = Vec::with_capacity(frames.len());
    let mut captures = Vec::with_capacity(frames.len());
    for (i, f) in frames.into_iter().enumerate() {
        let mut rec = f.record;
        let rel = format!("images/{i:05}.pgm");
        let k = crop_intrinsics(&rec.face_center(), &cfg.normalization);
        ensure_parent(&out.join(&rel))?;
        render_face_k(&rec, &k, w, h, &cfg.synth.render)?.save_pgm(out.join(&rel))?;
        rec.image = Some(rel);
        captures.push(Capture {
            subject_id: rec.subject_id,
            camera_id: rec.camera_id.clone(),
            target_id: rec.target_id,
            zone: rec.zone,
            face_center: rec.face_center,
            target: scene.to_depth_frame(&rec.target()).into(),
            target_frame: TargetFrame::Depth,
            landmarks: rec.landmarks.clone(),
            posture: rec.posture,
            image: rec.image.clone(),
        });
        records.push(rec);
    }
    write_jsonl(&out.join("captures.jsonl"), &captures)?;
    save_records(&out.join("dataset.jsonl"), &records)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            seed: cfg.seed,
            scene_seed,
            frames: records.len(),
            boards: scene.boards.len(),
            noise_px: cfg.calibration.noise_px,
        },
    )?;
    Ok(format!(
        "simulated {} frames and {} board placements into {}\n",
        records.len(),
        scene.boards.len(),
        out.display()
    ))
}
