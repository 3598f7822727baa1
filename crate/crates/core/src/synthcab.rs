//! Synthetic cabin: gaze targets per zone, a DMS camera at the world origin,
//! a depth camera with known extrinsics, two-sided chessboard observations,
//! simulated subjects under the three collection postures, and a cartoon
//! face renderer for the toy model.
//!
//! Frame convention (DMS camera frame): `x` toward the car's left, `y` down,
//! `z` rearward, toward the driver. The driver sits on the left.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{build_record, vec_from_yawpitch, yawpitch_from_vec, AnnotateError, Posture, RecordIds, SampleRecord, Zone};
use crate::calib::{chessboard_flip_transform, BoardSpec, CalibError, CornerObservation, CornerObservations};
use crate::geom::{GeomError, Mat3, PinholeCamera, RigidTransform, Rotation, Vec3};
use crate::normalize::{normalization_rotation, normalization_rotation_legacy, scale_matrix, warp_with_homography, NormalizationConfig, NormalizationMethod, NormalizeError};
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad cabin layout: {0}")]
    BadLayout(String),
    #[error("chessboard not visible: {0}")]
    BoardNotVisible(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

/// Axis-aligned box of targets belonging to one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneRegion {
    pub zone: Zone,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    pub count: usize,
}

impl ZoneRegion {
    fn new(zone: Zone, center: [f64; 3], half_extent: [f64; 3]) -> Self {
        Self { zone, center, half_extent, count: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPair {
    pub dms: PinholeCamera,
    pub depth: PinholeCamera,
}

impl Default for CameraPair {
    fn default() -> Self {
        Self {
            dms: PinholeCamera::new(1000.0, 1000.0, 640.0, 400.0, 1280, 800).expect("valid default"),
            depth: PinholeCamera::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CabinLayout {
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub zones: Vec<ZoneRegion>,
    /// Nominal depth-camera center in the DMS frame.
    pub depth_position: [f64; 3],
    /// Nominal depth→DMS rotation as a rotation vector (radians).
    pub depth_rotation_vector: [f64; 3],
    /// Per-scene random perturbation of the depth pose.
    pub depth_jitter_deg: f64,
    pub depth_jitter_m: f64,
    pub board: BoardSpec,
    pub board_count: usize,
    /// Board center in the DMS frame before jitter.
    pub board_center: [f64; 3],
    pub board_tilt_deg: f64,
    pub board_shift_m: f64,
    /// Depth camera delivers mirrored images.
    pub mirror: bool,
    /// Driver's nominal face center.
    pub face_center: [f64; 3],
}

impl Default for CabinLayout {
    fn default() -> Self {
        use Zone::*;
        Self {
            bounds_min: [-1.3, -0.75, -1.0],
            bounds_max: [0.7, 0.75, 1.0],
            zones: vec![
                ZoneRegion::new(LeftSideMirror, [0.6, 0.0, -0.2], [0.05, 0.04, 0.03]),
                ZoneRegion::new(RearViewMirror, [-0.4, -0.35, -0.3], [0.1, 0.03, 0.03]),
                ZoneRegion::new(RightSideMirror, [-1.2, 0.0, -0.3], [0.05, 0.04, 0.03]),
                ZoneRegion::new(CentralControlScreen, [-0.4, 0.15, -0.1], [0.1, 0.07, 0.03]),
                ZoneRegion::new(SteeringWheel, [0.0, 0.22, 0.25], [0.15, 0.05, 0.05]),
                ZoneRegion::new(Handbrake, [-0.35, 0.5, 0.5], [0.05, 0.05, 0.1]),
                ZoneRegion::new(Dashboard, [0.0, 0.06, -0.05], [0.12, 0.04, 0.03]),
                ZoneRegion::new(LeftSideWindshield, [0.2, -0.25, -0.6], [0.25, 0.12, 0.1]),
                ZoneRegion::new(RightSideWindshield, [-0.8, -0.25, -0.6], [0.25, 0.12, 0.1]),
            ],
            depth_position: [0.05, -0.1, 0.95],
            depth_rotation_vector: [0.0, std::f64::consts::PI, 0.0],
            depth_jitter_deg: 2.0,
            depth_jitter_m: 0.02,
            board: BoardSpec::new(6, 9, 0.03, 0.004).expect("valid default"),
            board_count: 10,
            board_center: [0.0, -0.05, 0.45],
            board_tilt_deg: 10.0,
            board_shift_m: 0.03,
            mirror: false,
            face_center: [0.0, -0.05, 0.65],
        }
    }
}

impl CabinLayout {
    fn inside(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.bounds_min[i] && p[i] <= self.bounds_max[i])
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadLayout(m));
        if (0..3).any(|i| !(self.bounds_min[i] < self.bounds_max[i])) {
            return bad("bounds_min must be below bounds_max".into());
        }
        let mut seen = [false; Zone::COUNT];
        for r in &self.zones {
            if !r.zone.is_named() {
                return bad("targets must belong to a named zone".into());
            }
            if std::mem::replace(&mut seen[r.zone.index()], true) {
                return bad(format!("zone {} listed twice", r.zone));
            }
            if r.half_extent.iter().any(|h| !(*h >= 0.0)) {
                return bad(format!("zone {} has a negative extent", r.zone));
            }
            let c = Vec3::from(r.center);
            let h = Vec3::from(r.half_extent);
            if !self.inside(&(c - h)) || !self.inside(&(c + h)) {
                return bad(format!("zone {} leaves the cabin bounds", r.zone));
            }
        }
        if self.zones.iter().all(|r| r.count == 0) {
            return bad("layout has no targets".into());
        }
        if !self.inside(&Vec3::from(self.face_center)) || self.face_center[2] <= 0.0 {
            return bad("face center must be inside the cabin, in front of the DMS camera".into());
        }
        if !(self.depth_jitter_deg >= 0.0 && self.depth_jitter_m >= 0.0 && self.board_tilt_deg >= 0.0 && self.board_shift_m >= 0.0) {
            return bad("jitter magnitudes must be non-negative".into());
        }
        if self.board_count == 0 {
            return bad("board_count must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub id: u32,
    pub zone: Zone,
    /// DMS frame, meters.
    pub position: [f64; 3],
}

impl Target {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

/// Front-face → DMS pose of one chessboard placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardPlacement {
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CabinScene {
    pub seed: u64,
    pub targets: Vec<Target>,
    pub cameras: CameraPair,
    /// Ground-truth depth→DMS extrinsics.
    pub depth_pose: RigidTransform,
    pub board: BoardSpec,
    pub mirror: bool,
    pub boards: Vec<BoardPlacement>,
    pub face_center: [f64; 3],
}

impl CabinScene {
    pub fn targets_in(&self, zone: Zone) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(move |t| t.zone == zone)
    }

    /// A DMS-frame point expressed in the depth-camera frame.
    pub fn to_depth_frame(&self, p_dms: &Vec3) -> Vec3 {
        self.depth_pose.inverse().apply(p_dms)
    }
}

fn uniform_in_ball(rng: &mut impl Rng, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

fn small_rotation(rng: &mut impl Rng, max_deg: f64) -> Rotation {
    Rotation::from_rotation_vector(&uniform_in_ball(rng, max_deg.to_radians()))
}

pub fn generate_cabin(seed: u64, layout: &CabinLayout, cameras: &CameraPair) -> Result<CabinScene, SynthError> {
    use rand::SeedableRng;
    layout.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut targets = Vec::new();
    for region in &layout.zones {
        for _ in 0..region.count {
            let p: [f64; 3] = std::array::from_fn(|i| {
                let h = region.half_extent[i];
                region.center[i] + if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 }
            });
            targets.push(Target { id: targets.len() as u32, zone: region.zone, position: p });
        }
    }

    let nominal = Rotation::from_rotation_vector(&Vec3::from(layout.depth_rotation_vector));
    let depth_pose = RigidTransform::new(
        small_rotation(&mut rng, layout.depth_jitter_deg).compose(&nominal),
        Vec3::from(layout.depth_position) + uniform_in_ball(&mut rng, layout.depth_jitter_m),
    );

    let board = layout.board;
    let half = Vec3::new(
        (board.cols - 1) as f64 * board.square_size / 2.0,
        (board.rows - 1) as f64 * board.square_size / 2.0,
        0.0,
    );
    let boards = (0..layout.board_count)
        .map(|_| {
            let r = small_rotation(&mut rng, layout.board_tilt_deg);
            let center = Vec3::from(layout.board_center) + uniform_in_ball(&mut rng, layout.board_shift_m);
            let t = center - r.apply(&half);
            BoardPlacement { pose: RigidTransform::new(r, t) }
        })
        .collect();

    Ok(CabinScene {
        seed,
        targets,
        cameras: *cameras,
        depth_pose,
        board,
        mirror: layout.mirror,
        boards,
        face_center: layout.face_center,
    })
}

/// Synthetic corner observations plus the exact poses that produced them.
#[derive(Debug, Clone)]
pub struct ChessboardSim {
    pub dms_obs: CornerObservations,
    pub depth_obs: CornerObservations,
    /// Front face → DMS.
    pub dms_pose: RigidTransform,
    /// Back face → depth camera.
    pub depth_pose: RigidTransform,
    /// Depth → DMS.
    pub truth: RigidTransform,
}

/// Projects the front corners into the DMS camera and the back corners into
/// the depth camera, adding i.i.d. Gaussian pixel noise of `noise_px`.
pub fn simulate_chessboard(
    scene: &CabinScene,
    placement: &BoardPlacement,
    noise_px: f64,
    rng: &mut impl Rng,
) -> Result<ChessboardSim, SynthError> {
    let flip = chessboard_flip_transform(&scene.board, scene.mirror);
    let dms_pose = placement.pose;
    // back → depth = (depth → DMS)⁻¹ ∘ (front → DMS) ∘ (back → front)
    let depth_pose = scene.depth_pose.inverse().then_after(&dms_pose).then_after(&flip);
    let noise = Normal::new(0.0, noise_px.max(0.0)).map_err(|e| SynthError::BadLayout(e.to_string()))?;

    let mut observe = |pose: &RigidTransform, cam: &PinholeCamera, xy: &[nalgebra::Vector2<f64>], name: &str| {
        let mut obs = Vec::with_capacity(xy.len());
        for c in xy {
            let p = pose.apply(&Vec3::new(c.x, c.y, 0.0));
            let px = cam
                .project(&p)
                .map_err(|_| SynthError::BoardNotVisible(format!("corner behind the {name} camera")))?;
            if !cam.contains(&px) {
                return Err(SynthError::BoardNotVisible(format!("corner outside the {name} image")));
            }
            let px = if noise_px > 0.0 {
                [px.x + noise.sample(rng), px.y + noise.sample(rng)]
            } else {
                [px.x, px.y]
            };
            obs.push(CornerObservation { board_xy: [c.x, c.y], pixel: px });
        }
        Ok(CornerObservations::new(obs)?)
    };

    let dms_obs = observe(&dms_pose, &scene.cameras.dms, &scene.board.corners(), "DMS")?;
    let depth_obs = observe(&depth_pose, &scene.cameras.depth, &scene.board.back_corners(scene.mirror), "depth")?;
    Ok(ChessboardSim { dms_obs, depth_obs, dms_pose, depth_pose, truth: scene.depth_pose })
}

/// Landmark template in the head frame (centroid at the origin). The head
/// frame matches the camera frame for a frontal face: `x` toward image
/// right, `y` down, the face looking along `-z`.
pub fn landmark_template() -> [Vec3; 8] {
    let raw = [
        Vec3::new(-0.045, -0.02, -0.035),
        Vec3::new(-0.018, -0.02, -0.045),
        Vec3::new(0.018, -0.02, -0.045),
        Vec3::new(0.045, -0.02, -0.035),
        Vec3::new(0.0, 0.015, -0.075),
        Vec3::new(-0.025, 0.05, -0.05),
        Vec3::new(0.025, 0.05, -0.05),
        Vec3::new(0.0, 0.08, -0.045),
    ];
    let c = raw.iter().sum::<Vec3>() / raw.len() as f64;
    raw.map(|p| p - c)
}

pub const FACE_RADIUS: f64 = 0.08;
pub const EYE_RADIUS: f64 = 0.022;
pub const PUPIL_RADIUS: f64 = 0.011;
/// Eyeball centers in the head frame.
pub const EYE_CENTERS: [[f64; 3]; 2] = [[-0.035, -0.02, -0.055], [0.035, -0.02, -0.055]];

/// Head orientation whose face direction (head `-z`) is `forward`, with no
/// roll about it.
pub fn head_rotation_facing(forward: &Vec3) -> Result<Rotation, SynthError> {
    let z = -forward.normalize();
    let x = Vec3::y().cross(&z);
    if x.norm() < 1e-9 {
        return Err(SynthError::Geom(GeomError::ZeroDirection));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Ok(Rotation::new(Matrix3::from_columns(&[x, y, z]))?)
}

/// Recovers head→camera rotation from landmarks by orthogonal Procrustes
/// against [`landmark_template`].
pub fn head_rotation_from_landmarks(landmarks: &[Vec3]) -> Result<Rotation, SynthError> {
    let template = landmark_template();
    if landmarks.len() != template.len() {
        return Err(SynthError::BadLayout(format!(
            "expected {} landmarks, got {}",
            template.len(),
            landmarks.len()
        )));
    }
    let centroid = landmarks.iter().sum::<Vec3>() / landmarks.len() as f64;
    let mut h = Mat3::zeros();
    for (m, p) in template.iter().zip(landmarks) {
        h += (p - centroid) * m.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let d = (u * v_t).determinant().signum();
    let r = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t;
    Ok(Rotation::orthonormalize(&r))
}

/// One simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSubject {
    pub id: u32,
    pub posture: Posture,
    pub base_face_center: [f64; 3],
    /// Frames per constant-head segment under the fixed-head posture.
    pub segment_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub record: SampleRecord,
    pub head_rotation: Rotation,
    /// Constant-head segment index (fixed-head posture); 0 otherwise.
    pub segment: usize,
}

fn blend_toward(gaze: &Vec3, weight: f64, yaw_noise: f64, pitch_noise: f64) -> Vec3 {
    let (y, p) = yawpitch_from_vec(gaze).expect("unit gaze");
    vec_from_yawpitch(weight * y + yaw_noise, weight * p + pitch_noise)
}

/// Samples `n` frames of `subject` fixating random scene targets.
///
/// Fixed-head keeps the head rotation constant within each segment;
/// fixed-position keeps the face center constant while the head turns
/// partly toward the target; free varies both.
pub fn sample_frames(
    scene: &CabinScene,
    subject: &SyntheticSubject,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SyntheticFrame>, SynthError> {
    if scene.targets.is_empty() {
        return Err(SynthError::BadLayout("scene has no targets".into()));
    }
    let base = Vec3::from(subject.base_face_center);
    let template = landmark_template();
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let segment_len = subject.segment_len.max(1);
    let mut segment_head = Rotation::identity();
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let target = &scene.targets[rng.random_range(0..scene.targets.len())];
        let offset_sigma = match subject.posture {
            Posture::FixedHead => 0.01,
            Posture::FixedPosition => 0.0,
            Posture::Free => 0.04,
        };
        let o = base + Vec3::from_fn(|_, _| offset_sigma * jitter.sample(rng));
        let t = target.position();
        let gaze = (t - o).normalize();
        let head = match subject.posture {
            Posture::FixedHead => {
                if k % segment_len == 0 {
                    let yaw = rng.random_range(-25.0..25.0);
                    let pitch = rng.random_range(-15.0..15.0);
                    segment_head = head_rotation_facing(&vec_from_yawpitch(yaw, pitch))?;
                }
                segment_head
            }
            Posture::FixedPosition => head_rotation_facing(&blend_toward(&gaze, 0.6, 0.0, 0.0))?,
            Posture::Free => {
                let (ny, np) = (5.0 * jitter.sample(rng), 5.0 * jitter.sample(rng));
                head_rotation_facing(&blend_toward(&gaze, 0.5, ny, np))?
            }
        };
        let landmarks = template.iter().map(|m| head.apply(m) + o).collect();
        let ids = RecordIds {
            subject_id: subject.id,
            camera_id: "dms".into(),
            target_id: target.id,
        };
        let record = build_record(&o, &t, target.zone.name(), landmarks, subject.posture, ids)?;
        frames.push(SyntheticFrame {
            record,
            head_rotation: head,
            segment: if subject.posture == Posture::FixedHead { k / segment_len } else { 0 },
        });
    }
    Ok(frames)
}

/// Size and composition of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub subjects: usize,
    pub frames: usize,
    pub segment_len: usize,
    /// Per-subject spread of the seated face position, meters.
    pub face_jitter_m: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { subjects: 6, frames: 512, segment_len: 8, face_jitter_m: 0.02 }
    }
}

/// Frames from `spec.subjects` subjects, postures assigned round-robin,
/// frames split as evenly as possible.
pub fn generate_dataset(scene: &CabinScene, spec: &DatasetSpec, rng: &mut impl Rng) -> Result<Vec<SyntheticFrame>, SynthError> {
    if spec.subjects == 0 || spec.frames == 0 {
        return Err(SynthError::BadLayout("dataset needs at least one subject and one frame".into()));
    }
    if !(spec.face_jitter_m >= 0.0) {
        return Err(SynthError::BadLayout("face_jitter_m must be non-negative".into()));
    }
    let jitter = Normal::new(0.0, spec.face_jitter_m).map_err(|e| SynthError::BadLayout(e.to_string()))?;
    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.subjects {
        let n = spec.frames / spec.subjects + usize::from(k < spec.frames % spec.subjects);
        let base = Vec3::from(scene.face_center) + Vec3::from_fn(|_, _| jitter.sample(rng));
        let subject = SyntheticSubject {
            id: k as u32,
            posture: Posture::ALL[k % Posture::ALL.len()],
            base_face_center: base.into(),
            segment_len: spec.segment_len,
        };
        frames.extend(sample_frames(scene, &subject, n, rng)?);
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Samples per pixel along each axis.
    pub supersample: usize,
    pub draw_eyes: bool,
    pub background: f64,
    pub face: f64,
    pub sclera: f64,
    pub pupil: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            supersample: 3,
            draw_eyes: true,
            background: 0.1,
            face: 0.55,
            sclera: 0.95,
            pupil: 0.0,
        }
    }
}

/// Camera-frame centers of the rendered spheres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFeatures {
    pub face: Vec3,
    pub eyes: [Vec3; 2],
    pub pupils: [Vec3; 2],
}

pub fn face_features(record: &SampleRecord) -> Result<FaceFeatures, SynthError> {
    let head = head_rotation_from_landmarks(&record.landmarks())?;
    let o = record.face_center();
    let g = record.gaze.vector();
    let eyes = EYE_CENTERS.map(|e| head.apply(&Vec3::from(e)) + o);
    Ok(FaceFeatures {
        face: o,
        eyes,
        pupils: eyes.map(|e| e + g * EYE_RADIUS),
    })
}

fn sphere_hit(d: &Vec3, center: &Vec3, radius: f64) -> bool {
    center.dot(d) > 0.0 && center.cross(d).norm_squared() <= radius * radius
}

/// Renders the face with an arbitrary intrinsic matrix `k` (camera frame
/// orientation, pixel centers at integer coordinates).
pub fn render_face_k(
    record: &SampleRecord,
    k: &Mat3,
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> Result<Raster, SynthError> {
    let f = face_features(record)?;
    if f.face.z <= crate::geom::MIN_DEPTH {
        return Err(SynthError::Geom(GeomError::BehindCamera(f.face.z)));
    }
    let k_inv = k.try_inverse().ok_or(SynthError::Geom(GeomError::InvalidIntrinsics("singular K".into())))?;
    let ss = opts.supersample.max(1);
    let visible_pupils: Vec<Vec3> = f
        .pupils
        .iter()
        .zip(&f.eyes)
        .filter(|(p, e)| (*p - *e).dot(p) < 0.0)
        .map(|(p, _)| *p)
        .collect();
    let weight = 1.0 / (ss * ss) as f64;
    Ok(Raster::from_fn(width, height, |x, y| {
        let mut acc = 0.0;
        for sy in 0..ss {
            for sx in 0..ss {
                let u = x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5;
                let v = y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5;
                let d = (k_inv * Vec3::new(u, v, 1.0)).normalize();
                let mut val = opts.background;
                if sphere_hit(&d, &f.face, FACE_RADIUS) {
                    val = opts.face;
                    if opts.draw_eyes {
                        if f.eyes.iter().any(|e| sphere_hit(&d, e, EYE_RADIUS)) {
                            val = opts.sclera;
                        }
                        if visible_pupils.iter().any(|p| sphere_hit(&d, p, PUPIL_RADIUS)) {
                            val = opts.pupil;
                        }
                    }
                }
                acc += val;
            }
        }
        acc * weight
    }))
}

pub fn render_face(record: &SampleRecord, camera: &PinholeCamera, opts: &RenderOptions) -> Result<Raster, SynthError> {
    render_face_k(record, &camera.k_matrix(), camera.width as usize, camera.height as usize, opts)
}

/// Intrinsics of a face-centered crop of the original view: same orientation
/// as the source camera, focal length scaled so the face has the size it
/// would have at the normalized distance.
pub fn crop_intrinsics(face_center: &Vec3, cfg: &NormalizationConfig) -> Mat3 {
    let s = face_center.norm() / cfg.d_norm;
    let (fx, fy) = (cfg.virtual_fx * s, cfg.virtual_fy * s);
    let cx = cfg.out_width as f64 / 2.0 - fx * face_center.x / face_center.z;
    let cy = cfg.out_height as f64 / 2.0 - fy * face_center.y / face_center.z;
    Mat3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

/// The two model inputs for one record and the normalization that links them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleViews {
    pub original: Raster,
    pub normalized: Raster,
    pub rotation: Rotation,
}

/// Renders the original-view crop and warps it into the normalized view.
pub fn render_views(record: &SampleRecord, cfg: &NormalizationConfig, opts: &RenderOptions) -> Result<SampleViews, SynthError> {
    cfg.validate()?;
    let o = record.face_center();
    let rotation = match cfg.method {
        NormalizationMethod::Ours => normalization_rotation(&o)?,
        NormalizationMethod::Legacy => {
            normalization_rotation_legacy(&head_rotation_from_landmarks(&record.landmarks())?, &o)?
        }
    };
    let (w, h) = (cfg.out_width as usize, cfg.out_height as usize);
    let k_crop = crop_intrinsics(&o, cfg);
    let original = render_face_k(record, &k_crop, w, h, opts)?;
    let k_crop_inv = k_crop.try_inverse().ok_or(NormalizeError::SingularHomography(0.0))?;
    let hom = cfg.virtual_camera()?.k_matrix() * scale_matrix(&o, cfg.d_norm)? * rotation.matrix() * k_crop_inv;
    let normalized = warp_with_homography(&original, &hom, w, h)?;
    Ok(SampleViews { original, normalized, rotation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::gaze_from_target;
    use crate::calib::{calibrate_two_sided, transfer_point};
    use crate::geom::rotation_geodesic_deg;
    use crate::normalize::{normalize_sample, warp_image};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> CabinScene {
        generate_cabin(seed, &CabinLayout::default(), &CameraPair::default()).unwrap()
    }

    #[test]
    fn cabin_is_deterministic_and_in_bounds() {
        let layout = CabinLayout::default();
        let a = scene(3);
        assert_eq!(a, scene(3));
        assert_ne!(a, scene(4));
        for region in &layout.zones {
            assert_eq!(a.targets_in(region.zone).count(), region.count);
        }
        assert!(a.targets.iter().all(|t| layout.inside(&t.position()) && t.zone.is_named()));
        assert_eq!(a.boards.len(), layout.board_count);
    }

    #[test]
    fn bad_layouts() {
        let mut l = CabinLayout::default();
        l.zones[0].center = [5.0, 0.0, 0.0];
        assert!(matches!(generate_cabin(0, &l, &CameraPair::default()), Err(SynthError::BadLayout(_))));
        let mut l = CabinLayout::default();
        l.zones[1].zone = l.zones[0].zone;
        assert!(matches!(generate_cabin(0, &l, &CameraPair::default()), Err(SynthError::BadLayout(_))));
        let mut l = CabinLayout::default();
        l.zones[0].zone = Zone::None;
        assert!(matches!(generate_cabin(0, &l, &CameraPair::default()), Err(SynthError::BadLayout(_))));
    }

    #[test]
    fn noise_free_chessboard_recovers_extrinsics() {
        let s = scene(11);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for placement in &s.boards {
            let sim = simulate_chessboard(&s, placement, 0.0, &mut rng).unwrap();
            let res = calibrate_two_sided(&sim.dms_obs, &s.cameras.dms, &sim.depth_obs, &s.cameras.depth, &s.board, s.mirror)
                .unwrap();
            let rot = res.calibration.rot;
            assert!(rotation_geodesic_deg(&rot.rotation, &sim.truth.rotation) < 1e-7);
            assert!((rot.translation - sim.truth.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn mirrored_depth_camera_recovers_extrinsics() {
        let layout = CabinLayout { mirror: true, ..CabinLayout::default() };
        let s = generate_cabin(5, &layout, &CameraPair::default()).unwrap();
        let sim = simulate_chessboard(&s, &s.boards[0], 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let res =
            calibrate_two_sided(&sim.dms_obs, &s.cameras.dms, &sim.depth_obs, &s.cameras.depth, &s.board, true).unwrap();
        assert!(rotation_geodesic_deg(&res.calibration.rot.rotation, &sim.truth.rotation) < 1e-7);
    }

    #[test]
    fn board_behind_camera_is_not_visible() {
        let s = scene(1);
        let mut p = s.boards[0];
        p.pose.translation.z = -0.5;
        let err = simulate_chessboard(&s, &p, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, SynthError::BoardNotVisible(_)));
    }

    #[test]
    fn depth_frame_target_transfer_matches_direct_annotation() {
        let s = scene(21);
        let sim = simulate_chessboard(&s, &s.boards[0], 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let res = calibrate_two_sided(&sim.dms_obs, &s.cameras.dms, &sim.depth_obs, &s.cameras.depth, &s.board, s.mirror)
            .unwrap();
        let o = Vec3::from(s.face_center);
        for t in &s.targets {
            let direct = gaze_from_target(&o, &t.position()).unwrap();
            let via = gaze_from_target(&o, &transfer_point(&res.calibration, &s.to_depth_frame(&t.position()))).unwrap();
            let err = crate::metrics::angular_error_deg(&direct.vector(), &via.vector()).unwrap();
            assert!(err < 1e-8, "{err}");
        }
    }

    fn subject(posture: Posture) -> SyntheticSubject {
        SyntheticSubject { id: 1, posture, base_face_center: [0.0, -0.05, 0.65], segment_len: 5 }
    }

    #[test]
    fn frames_satisfy_record_invariants_and_postures() {
        let s = scene(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for posture in Posture::ALL {
            let frames = sample_frames(&s, &subject(posture), 40, &mut rng).unwrap();
            for f in &frames {
                f.record.validate().unwrap();
                let t = &s.targets[f.record.target_id as usize];
                assert_eq!(f.record.zone, t.zone);
                let g = gaze_from_target(&f.record.face_center(), &f.record.target()).unwrap();
                assert!((g.vector() - f.record.gaze.vector()).amax() < 1e-12);
                let recovered = head_rotation_from_landmarks(&f.record.landmarks()).unwrap();
                assert!(rotation_geodesic_deg(&recovered, &f.head_rotation) < 1e-6);
            }
            match posture {
                Posture::FixedHead => {
                    for w in frames.windows(2) {
                        if w[0].segment == w[1].segment {
                            assert_eq!(w[0].head_rotation, w[1].head_rotation);
                        }
                    }
                }
                Posture::FixedPosition => {
                    assert!(frames.iter().all(|f| f.record.face_center == frames[0].record.face_center));
                }
                Posture::Free => {}
            }
        }
    }

    fn frontal_record(gaze_target: Vec3) -> SampleRecord {
        let o = Vec3::new(0.0, 0.0, 0.6);
        let landmarks = landmark_template().iter().map(|m| m + o).collect();
        let ids = RecordIds { subject_id: 0, camera_id: "dms".into(), target_id: 0 };
        build_record(&o, &gaze_target, "dashboard", landmarks, Posture::Free, ids).unwrap()
    }

    #[test]
    fn dataset_splits_frames_across_subjects() {
        let s = scene(6);
        let spec = DatasetSpec { subjects: 4, frames: 10, ..Default::default() };
        let frames = generate_dataset(&s, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(frames.len(), 10);
        let per: Vec<usize> = (0..4).map(|k| frames.iter().filter(|f| f.record.subject_id == k).count()).collect();
        assert_eq!(per, vec![3, 3, 2, 2]);
        assert_eq!(frames[0].record.posture, Posture::FixedHead);
        assert_eq!(frames[3].record.posture, Posture::FixedPosition);
    }

    #[test]
    fn frontal_gaze_centers_pupils() {
        let rec = frontal_record(Vec3::new(0.0, 0.0, 0.0));
        let f = face_features(&rec).unwrap();
        let cam = CameraPair::default().dms;
        for (e, p) in f.eyes.iter().zip(&f.pupils) {
            // Pupil sits straight in front of the eyeball center.
            assert!(((p - e) - Vec3::new(0.0, 0.0, -EYE_RADIUS)).amax() < 1e-12);
            let (pe, pp) = (cam.project(e).unwrap(), cam.project(p).unwrap());
            let eye_px = cam.fx * EYE_RADIUS / e.z;
            assert!((pe - pp).norm() < 0.1 * eye_px);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let rec = frontal_record(Vec3::new(0.1, 0.1, 0.0));
        let cam = PinholeCamera::new(300.0, 300.0, 40.0, 30.0, 80, 60).unwrap();
        let a = render_face(&rec, &cam, &RenderOptions::default()).unwrap();
        assert_eq!(a, render_face(&rec, &cam, &RenderOptions::default()).unwrap());
        assert!(a.data().iter().any(|&v| v == RenderOptions::default().pupil));
    }

    #[test]
    fn warped_face_blob_lands_on_principal_point() {
        let cam = CameraPair::default().dms;
        let cfg = NormalizationConfig { virtual_fx: 300.0, virtual_fy: 300.0, out_width: 96, out_height: 96, ..Default::default() };
        let opts = RenderOptions { draw_eyes: false, background: 0.0, face: 1.0, ..Default::default() };
        let s = scene(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = sample_frames(&s, &subject(Posture::Free), 5, &mut rng).unwrap();
        for f in frames {
            let img = render_face(&f.record, &cam, &opts).unwrap();
            let res = normalize_sample(&f.record.face_center(), &cam, None, None, &cfg).unwrap();
            let out = warp_image(&img, &cam, &res.virtual_camera, &res.scale, &res.rotation).unwrap();
            let (x, y) = out.centroid().unwrap();
            assert!((x - 48.0).abs() < 0.5 && (y - 48.0).abs() < 0.5, "({x}, {y})");
        }
    }

    #[test]
    fn views_have_configured_size() {
        let cfg = NormalizationConfig { virtual_fx: 100.0, virtual_fy: 100.0, out_width: 32, out_height: 32, ..Default::default() };
        let s = scene(8);
        let frames = sample_frames(&s, &subject(Posture::Free), 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for f in frames {
            let v = render_views(&f.record, &cfg, &RenderOptions::default()).unwrap();
            assert_eq!((v.original.width(), v.original.height()), (32, 32));
            assert_eq!((v.normalized.width(), v.normalized.height()), (32, 32));
            let (cx, cy) = v.normalized.centroid().unwrap();
            assert!((cx - 16.0).abs() < 3.0 && (cy - 16.0).abs() < 3.0);
        }
    }
}
