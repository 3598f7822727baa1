//! End-to-end acceptance checks for the whole pipeline. Each criterion prints
//! one `[PASS]` or `[FAIL]` line; the binary exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cabingaze_core::annotate::{build_record, gaze_from_target, Posture, RecordIds, Zone};
use cabingaze_core::calib::{
    calibrate_two_sided, chessboard_flip_transform, compose_cross_camera, transfer_point, BoardSpec,
};
use cabingaze_core::geom::{rotation_geodesic_deg, Mat3, RigidTransform, Rotation, Vec3};
use cabingaze_core::metrics::{angular_error_deg, average_precision_at, zone_metrics};
use cabingaze_core::normalize::{normalize_sample, normalization_rotation, transform_gaze, warp_image, NormalizationConfig};
use cabingaze_core::synthcab::{
    generate_cabin, generate_dataset, render_face, simulate_chessboard, CabinLayout, CameraPair, DatasetSpec,
    RenderOptions,
};
use cabingaze_core::triplane::{encode_hit, intersect_triplane, TriPlaneConfig};
use cabingaze_model::data::{normalization_for, synthetic_set};
use cabingaze_model::gradcheck::{gradcheck, GradCheckConfig};
use cabingaze_model::loss::loss_total;
use cabingaze_model::model::{GazeTerm, StreamKind, ZoneTerm, GAZE_TERMS, ZONE_TERMS};
use cabingaze_model::train::{evaluate, fit, HeadEvaluation, TrainConfig, TrainingCurve};
use cabingaze_model::{GazeModel, Labels, LossWeights, ModelConfig, Outputs, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {:.2?}, limit {limit:?}", elapsed))
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pose(rng: &mut impl Rng) -> RigidTransform {
    let axis = random_unit(rng);
    let rot = Rotation::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0));
    RigidTransform::new(rot, t)
}

fn scenes() -> (CabinLayout, CameraPair) {
    (CabinLayout::default(), CameraPair::default())
}

/// Depth point → back board face → front board face → DMS, step by step.
fn calibration_chain() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_chain: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for _ in 0..1000 {
        let dms = random_pose(&mut rng);
        let depth = random_pose(&mut rng);
        let thickness = rng.random_range(0.0..0.02);
        let mirror = rng.random_bool(0.5);
        let spec = BoardSpec::new(6, 9, 0.03, thickness).map_err(|e| e.to_string())?;
        let calib = compose_cross_camera(&dms, &depth, &chessboard_flip_transform(&spec, mirror));

        let r_chess = if mirror {
            Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0))
        } else {
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
        };
        let t_chess = Vec3::new(0.0, 0.0, -thickness);
        let r_dms = *dms.rotation.matrix();
        let r_depth = *depth.rotation.matrix();
        let r_rot = r_dms * r_chess * r_depth.transpose();
        let t_rot = -(r_dms * r_chess * r_depth.transpose() * depth.translation) + r_dms * t_chess + dms.translation;

        let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let p_back = r_depth.transpose() * (p - depth.translation);
        let p_front = r_chess * p_back + t_chess;
        let p_dms = r_dms * p_front + dms.translation;

        let got = transfer_point(&calib, &p);
        worst_chain = worst_chain.max((got - p_dms).amax());
        worst_closed = worst_closed.max((got - (r_rot * p + t_rot)).amax());
    }
    let elapsed = start.elapsed();
    check(worst_chain <= 1e-12, || format!("chain deviation {worst_chain:.3e} m"))?;
    check(worst_closed <= 1e-12, || format!("closed-form deviation {worst_closed:.3e} m"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "1000 triples, max deviation {:.2e} m (chain) / {:.2e} m (closed form), {:.2?}",
        worst_chain, worst_closed, elapsed
    ))
}

fn calibration_recovery() -> Outcome {
    let start = Instant::now();
    let (layout, cameras) = scenes();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_deg: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    let mut clean = 0;
    for seed in 0..20 {
        let scene = generate_cabin(seed, &layout, &cameras).map_err(|e| e.to_string())?;
        for placement in &scene.boards {
            let sim = simulate_chessboard(&scene, placement, 0.0, &mut rng).map_err(|e| e.to_string())?;
            let r = calibrate_two_sided(&sim.dms_obs, &cameras.dms, &sim.depth_obs, &cameras.depth, &scene.board, scene.mirror)
                .map_err(|e| e.to_string())?;
            worst_deg = worst_deg.max(rotation_geodesic_deg(&r.calibration.rot.rotation, &sim.truth.rotation));
            worst_m = worst_m.max((r.calibration.rot.translation - sim.truth.translation).amax());
            clean += 1;
        }
    }
    check(worst_deg <= 1e-7, || format!("noise-free rotation error {worst_deg:.3e} deg"))?;
    check(worst_m <= 1e-9, || format!("noise-free translation error {worst_m:.3e} m"))?;

    let mut errors = Vec::with_capacity(200);
    for trial in 0..200u64 {
        let scene = generate_cabin(1000 + trial, &layout, &cameras).map_err(|e| e.to_string())?;
        let sim = simulate_chessboard(&scene, &scene.boards[0], 0.5, &mut rng).map_err(|e| e.to_string())?;
        let r = calibrate_two_sided(&sim.dms_obs, &cameras.dms, &sim.depth_obs, &cameras.depth, &scene.board, scene.mirror)
            .map_err(|e| e.to_string())?;
        errors.push(rotation_geodesic_deg(&r.calibration.rot.rotation, &sim.truth.rotation));
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[99] + errors[100]);
    check(median < 0.5, || format!("median rotation error under noise {median:.3} deg"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "{clean} noise-free boards: {worst_deg:.2e} deg / {worst_m:.2e} m; sigma 0.5 px median {median:.3} deg over 200; {elapsed:.2?}"
    ))
}

fn target_transfer() -> Outcome {
    let (layout, cameras) = scenes();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for seed in 0..10 {
        let scene = generate_cabin(seed, &layout, &cameras).map_err(|e| e.to_string())?;
        let sim = simulate_chessboard(&scene, &scene.boards[0], 0.0, &mut rng).map_err(|e| e.to_string())?;
        let calib = calibrate_two_sided(&sim.dms_obs, &cameras.dms, &sim.depth_obs, &cameras.depth, &scene.board, scene.mirror)
            .map_err(|e| e.to_string())?
            .calibration;
        let o = Vec3::from(scene.face_center);
        for target in &scene.targets {
            let t_dms = target.position();
            let t_depth = scene.to_depth_frame(&t_dms);
            let ids = || RecordIds { subject_id: 0, camera_id: "dms".into(), target_id: target.id };
            let moved = build_record(&o, &transfer_point(&calib, &t_depth), target.zone.name(), vec![], Posture::Free, ids())
                .map_err(|e| e.to_string())?;
            let direct = gaze_from_target(&o, &t_dms).map_err(|e| e.to_string())?;
            let err = angular_error_deg(&moved.gaze.vector(), &direct.vector()).map_err(|e| e.to_string())?;
            worst = worst.max(err);
            n += 1;
        }
    }
    check(worst <= 1e-8, || format!("transferred gaze deviates by {worst:.3e} deg"))?;
    Ok(format!("{n} targets, max deviation {worst:.2e} deg"))
}

fn normalization_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut axis_err, mut round_trip, mut angle_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10_000 {
        let o = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.2..1.5));
        let r = normalization_rotation(&o).map_err(|e| e.to_string())?;
        axis_err = axis_err.max((r.apply(&(o / o.norm())) - Vec3::z()).amax());
        let g = random_unit(&mut rng);
        let h = random_unit(&mut rng);
        round_trip = round_trip.max((r.transpose().apply(&r.apply(&g)) - g).amax());
        let before = angular_error_deg(&g, &h).map_err(|e| e.to_string())?;
        let after = angular_error_deg(&r.apply(&g), &r.apply(&h)).map_err(|e| e.to_string())?;
        angle_err = angle_err.max((before - after).abs());
    }
    check(axis_err <= 1e-9, || format!("R o/|o| off the optical axis by {axis_err:.3e}"))?;
    check(round_trip <= 1e-12, || format!("R^T R g round trip error {round_trip:.3e}"))?;
    check(angle_err <= 1e-9, || format!("angular error changed by {angle_err:.3e} deg"))?;

    let (layout, cameras) = scenes();
    let scene = generate_cabin(4, &layout, &cameras).map_err(|e| e.to_string())?;
    let spec = DatasetSpec { subjects: 3, frames: 30, ..DatasetSpec::default() };
    let frames = generate_dataset(&scene, &spec, &mut rng).map_err(|e| e.to_string())?;
    let cfg = NormalizationConfig { virtual_fx: 300.0, virtual_fy: 300.0, out_width: 96, out_height: 96, ..Default::default() };
    let opts = RenderOptions { draw_eyes: false, background: 0.0, face: 1.0, ..Default::default() };
    let mut blob_err: f64 = 0.0;
    for f in &frames {
        let img = render_face(&f.record, &cameras.dms, &opts).map_err(|e| e.to_string())?;
        let n = normalize_sample(&f.record.face_center(), &cameras.dms, Some(&f.record.gaze), None, &cfg)
            .map_err(|e| e.to_string())?;
        let out = warp_image(&img, &cameras.dms, &n.virtual_camera, &n.scale, &n.rotation).map_err(|e| e.to_string())?;
        let (x, y) = out.centroid().ok_or("warped image is empty")?;
        let (cx, cy) = (n.virtual_camera.cx, n.virtual_camera.cy);
        blob_err = blob_err.max((x - cx).abs().max((y - cy).abs()));
        let g = transform_gaze(&n.rotation, &f.record.gaze);
        check(n.gaze == Some(g), || "normalized label differs from R g".into())?;
    }
    check(blob_err <= 0.5, || format!("face blob lands {blob_err:.3} px from the principal point"))?;
    Ok(format!(
        "axis {axis_err:.1e}, round trip {round_trip:.1e}, angle {angle_err:.1e} deg; blob offset {blob_err:.3} px over {} frames",
        frames.len()
    ))
}

fn triplane_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = TriPlaneConfig::default();
    let (mut plane_err, mut col_err): (f64, f64) = (0.0, 0.0);
    let mut hits = 0;
    for _ in 0..10_000 {
        let o = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let g = random_unit(&mut rng);
        let hit = intersect_triplane(&o, &g);
        for axis in 0..3 {
            let Some(p) = hit.point(axis) else { continue };
            hits += 1;
            plane_err = plane_err.max(p[axis].abs());
            let d = p - o;
            if d.norm() > 1e-12 {
                col_err = col_err.max(d.cross(&g).norm() / d.norm());
            }
        }
        let enc = encode_hit(&hit, &cfg);
        check(enc.len() == cfg.encoded_len(), || format!("encoding length {}", enc.len()))?;
        check(enc.iter().all(|v| (-1.0..=1.0).contains(v)), || "encoding leaves [-1, 1]".into())?;
    }
    check(plane_err <= 1e-9, || format!("plane equation residual {plane_err:.3e}"))?;
    check(col_err <= 1e-9, || format!("collinearity residual {col_err:.3e}"))?;
    Ok(format!("{hits} valid hits, plane {plane_err:.1e}, collinearity {col_err:.1e}, encodings in [-1, 1]"))
}

fn tiny_model() -> GazeModel {
    GazeModel::new(&ModelConfig::preset(Preset::Tiny), &TriPlaneConfig::default()).expect("tiny preset builds")
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let model = tiny_model();
    let spec = DatasetSpec { subjects: 1, frames: 2, ..DatasetSpec::default() };
    let set = synthetic_set(3, &spec, &normalization_for(Preset::Tiny), &RenderOptions::default()).map_err(|e| e.to_string())?;
    let params = model.init_params(3);
    let report = gradcheck(&model, &params, &set.samples, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let sg = &report.stop_gradient;
    check(report.entries.len() >= 200, || format!("only {} parameters checked", report.entries.len()))?;
    check(report.max_rel_error < 1e-4, || format!("max relative error {:.3e}", report.max_rel_error))?;
    check(sg.checked > 0 && sg.nonzero == 0, || format!("{} of {} blocked parameters got gradient", sg.nonzero, sg.checked))?;
    // The blocked path must actually carry value, otherwise the zero says nothing.
    check(sg.max_blocked_fd > 0.0, || "blocked path has no effect on the zone loss".into())?;
    check(sg.max_fused_head_grad > 0.0, || "fused gaze head gets no gradient from its own loss".into())?;
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "{} params, max rel {:.2e}; {} blocked params exactly zero (blocked-path FD {:.2e}); {elapsed:.2?}",
        report.entries.len(),
        report.max_rel_error,
        sg.checked,
        sg.max_blocked_fd
    ))
}

fn oracle_l1(pred: [f64; 2], target: [f64; 2]) -> f64 {
    ((pred[0] - target[0]).abs() + (pred[1] - target[1]).abs()) / 2.0
}

fn oracle_ce(logits: &[f64; Zone::COUNT], class: usize) -> f64 {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    -(logits[class].exp() / z).ln()
}

fn oracle_total(out: &Outputs, labels: &Labels) -> f64 {
    let (go, gn, zone) = (labels.gaze_o.unwrap(), labels.gaze_n.unwrap(), labels.zone.unwrap());
    let mut l1 = 0.0;
    for stream in [StreamKind::Original, StreamKind::Normalized] {
        let target = if stream == StreamKind::Original { go } else { gn };
        for level in 0..4 {
            l1 += oracle_l1(out.gaze_of(GazeTerm::Level(stream, level)), target);
        }
        l1 += oracle_l1(out.gaze_of(GazeTerm::Final(stream)), target);
    }
    l1 += oracle_l1(out.gaze_of(GazeTerm::Fused), gn);
    let l2: f64 = ZoneTerm::ALL.iter().map(|t| oracle_ce(&out.zone_logits[t.index()], zone.index())).sum();
    l1 + l2
}

fn loss_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let w = LossWeights::default();
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let out = Outputs {
            gaze: std::array::from_fn(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)]),
            zone_logits: std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-8.0..8.0))),
            gaze_o: Vec3::z(),
            hit: Default::default(),
        };
        let labels = Labels {
            gaze_o: Some([rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)]),
            gaze_n: Some([rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)]),
            zone: Zone::from_index(rng.random_range(0..Zone::COUNT)),
        };
        let got = loss_total(&out, &labels, &w).map_err(|e| e.to_string())?.total;
        worst = worst.max((got - oracle_total(&out, &labels)).abs());
    }

    let model = tiny_model();
    let spec = DatasetSpec { subjects: 2, frames: 6, ..DatasetSpec::default() };
    let set = synthetic_set(7, &spec, &normalization_for(Preset::Tiny), &RenderOptions::default()).map_err(|e| e.to_string())?;
    let params = model.init_params(7);
    for s in &set.samples {
        let out = model.forward(&params, s).map_err(|e| e.to_string())?.outputs;
        let got = loss_total(&out, &s.labels, &w).map_err(|e| e.to_string())?.total;
        worst = worst.max((got - oracle_total(&out, &s.labels)).abs());
    }
    check(worst <= 1e-12, || format!("loss differs from the recomputation by {worst:.3e}"))?;

    let (go, gn, zone) = ([0.3, -0.1], [0.05, 0.2], Zone::SteeringWheel);
    let mut logits = [-1e3; Zone::COUNT];
    logits[zone.index()] = 1e3;
    let perfect = Outputs {
        gaze: std::array::from_fn(|i| if GazeTerm::ALL[i].space() == StreamKind::Original { go } else { gn }),
        zone_logits: [logits; ZONE_TERMS],
        gaze_o: Vec3::z(),
        hit: Default::default(),
    };
    let labels = Labels { gaze_o: Some(go), gaze_n: Some(gn), zone: Some(zone) };
    let zero = loss_total(&perfect, &labels, &w).map_err(|e| e.to_string())?.total;
    check(zero == 0.0, || format!("perfect predictions cost {zero:e}"))?;
    Ok(format!("{GAZE_TERMS} L1 + {ZONE_TERMS} CE terms, max deviation {worst:.1e}; perfect predictions give 0"))
}

struct Trained {
    curve: TrainingCurve,
    repeat: TrainingCurve,
    eval: HeadEvaluation,
    elapsed: Duration,
}

fn trained() -> &'static Result<Trained, String> {
    static CELL: OnceLock<Result<Trained, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let model = tiny_model();
        let spec = DatasetSpec { frames: 512, ..DatasetSpec::default() };
        let set = synthetic_set(7, &spec, &normalization_for(Preset::Tiny), &RenderOptions::default()).map_err(|e| e.to_string())?;
        let cfg = TrainConfig::default();
        let run = || -> Result<(TrainingCurve, Vec<f64>), String> {
            let mut p = model.init_params(0);
            let curve = fit(&model, &set.samples, &mut p, &cfg).map_err(|e| e.to_string())?;
            Ok((curve, p))
        };
        let (curve, params) = run()?;
        let elapsed = start.elapsed();
        let (repeat, _) = run()?;
        let eval = evaluate(&model, &params, &set.samples).map_err(|e| e.to_string())?;
        Ok(Trained { curve, repeat, eval, elapsed })
    })
}

fn trainability() -> Outcome {
    let t = trained().as_ref().map_err(Clone::clone)?;
    let losses = t.curve.losses();
    check(losses.len() >= 10, || format!("only {} epochs", losses.len()))?;
    for w in losses[..10].windows(2) {
        check(w[1] < w[0], || format!("loss rose within the first 10 epochs: {:?}", &losses[..10]))?;
    }
    let final_err = t.curve.epochs.last().expect("epochs").mean_error_deg;
    check(final_err < 25.0, || format!("final train error {final_err:.2} deg"))?;
    check(t.curve == t.repeat, || "repeat run produced a different curve".into())?;
    within(t.elapsed, Duration::from_secs(300))?;
    Ok(format!(
        "512 samples, loss {:.3} -> {:.3} over {} epochs, final error {final_err:.2} deg, repeatable; {:.2?}",
        losses[0],
        losses[losses.len() - 1],
        losses.len(),
        t.elapsed
    ))
}

fn mechanism_trend() -> Outcome {
    let t = trained().as_ref().map_err(Clone::clone)?;
    let e = &t.eval.gaze_error_deg;
    let best = |k: StreamKind| (0..4).map(|l| e[GazeTerm::Level(k, l).index()]).fold(f64::INFINITY, f64::min);
    let (best_o, best_n) = (best(StreamKind::Original), best(StreamKind::Normalized));
    let final_o = e[GazeTerm::Final(StreamKind::Original).index()];
    let final_n = e[GazeTerm::Final(StreamKind::Normalized).index()];
    let fused = e[GazeTerm::Fused.index()];
    check(final_o <= best_o, || format!("original aggregate {final_o:.2} > best level {best_o:.2}"))?;
    check(final_n <= best_n, || format!("normalized aggregate {final_n:.2} > best level {best_n:.2}"))?;
    check(fused <= best_o.min(best_n), || format!("fused {fused:.2} > best level {:.2}", best_o.min(best_n)))?;
    let acc = &t.eval.zone_accuracy;
    let (pos, fz) = (acc[ZoneTerm::Positional.index()], acc[ZoneTerm::Fused.index()]);
    check(fz >= pos, || format!("fused zone accuracy {fz:.3} < positional {pos:.3}"))?;
    Ok(format!(
        "gaze error best level {:.2}/{:.2}, aggregate {final_o:.2}/{final_n:.2}, fused {fused:.2} deg; zone accuracy positional {pos:.3}, visual {:.3}, fused {fz:.3}",
        best_o,
        best_n,
        acc[ZoneTerm::Visual.index()]
    ))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let thresholds = [2.0, 4.0, 6.0, 8.0];
    for _ in 0..500 {
        let n = rng.random_range(1..200);
        let errors: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { rng.random_range(0..10) as f64 } else { rng.random_range(0.0..12.0) })
            .collect();
        let mut prev = 0.0;
        for k in thresholds {
            let ap = average_precision_at(&errors, k).map_err(|e| e.to_string())?;
            let mut below = 0usize;
            for e in &errors {
                if *e < k {
                    below += 1;
                }
            }
            check(ap == below as f64 / n as f64, || format!("AP@{k} = {ap}, counted {below}/{n}"))?;
            check(ap >= prev, || format!("AP not monotone at {k}"))?;
            prev = ap;
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..300);
        let truth: Vec<Zone> = (0..n).map(|_| Zone::ALL[rng.random_range(0..Zone::COUNT)]).collect();
        let pred: Vec<Zone> = truth
            .iter()
            .map(|&z| if rng.random_bool(0.6) { z } else { Zone::ALL[rng.random_range(0..Zone::COUNT)] })
            .collect();
        let m = zone_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let mut precisions = Vec::new();
        for zone in Zone::NAMED {
            let predicted = pred.iter().filter(|&&p| p == zone).count();
            let support = truth.iter().filter(|&&t| t == zone).count();
            let tp = pred.iter().zip(&truth).filter(|(&p, &t)| p == zone && t == zone).count();
            if predicted > 0 {
                precisions.push(tp as f64 / predicted as f64);
            } else if support > 0 {
                precisions.push(0.0);
            }
        }
        let oracle = if precisions.is_empty() { 0.0 } else { precisions.iter().sum::<f64>() / precisions.len() as f64 };
        worst = worst.max((m.macro_precision - oracle).abs());
    }
    check(worst <= 1e-12, || format!("macro precision differs from the named-zone mean by {worst:.3e}"))?;

    // Misclassifying only `None` samples must leave the macro average untouched.
    let truth = [Zone::Dashboard, Zone::Handbrake, Zone::None, Zone::None];
    let clean = zone_metrics(&truth, &truth).map_err(|e| e.to_string())?;
    let noisy = zone_metrics(&[Zone::Dashboard, Zone::Handbrake, Zone::None, Zone::Dashboard], &truth).map_err(|e| e.to_string())?;
    check(clean.macro_precision == 1.0, || format!("clean macro precision {}", clean.macro_precision))?;
    check(noisy.macro_recall == 1.0, || format!("None errors changed macro recall to {}", noisy.macro_recall))?;
    Ok(format!("AP@{{2,4,6,8}} matches counting and is monotone; macro average over named zones (max deviation {worst:.1e})"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("calibration chain equivalence", calibration_chain),
        ("calibration recovery", calibration_recovery),
        ("gaze-target transfer", target_transfer),
        ("normalization invariants", normalization_invariants),
        ("tri-plane correctness", triplane_correctness),
        ("gradient fidelity", gradient_fidelity),
        ("loss structure", loss_structure),
        ("trainability", trainability),
        ("mechanism trend", mechanism_trend),
        ("metrics", metrics),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
