//! Planar chessboard pose estimation and cross-camera extrinsics through a
//! transparent (two-sided) chessboard.
//!
//! Two cameras face each other across a transparent board. Each one sees the
//! corner grid from its own side and yields a board→camera pose. The two board
//! frames differ by a fixed flip (a half turn about the board x-axis plus the
//! board thickness along z), so the depth→DMS extrinsics follow by chaining:
//!
//! ```text
//! p_dms = R_dms (R_chess R_depth⁻¹ (p_depth − t_depth) + t_chess) + t_dms
//! ```
//!
//! Board frame convention: corner `(row i, col j)` sits at `(j·s, i·s, 0)`,
//! x along the columns, y along the rows, and z pointing away from the
//! observing camera (a fronto-parallel board seen with identity rotation).

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GeomError, Mat3, PinholeCamera, RigidTransform, Rotation, Vec2, Vec3};

/// Gauss–Newton iteration cap.
pub const MAX_ITERATIONS: usize = 50;
/// Refinement stops once the accepted step norm drops below this.
pub const STEP_TOLERANCE: f64 = 1e-12;
/// Step halvings tried before a Gauss–Newton step is rejected.
pub const MAX_BACKTRACKS: usize = 8;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("pose refinement did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid board: {0}")]
    InvalidBoard(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed observation line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Inner-corner grid geometry of a chessboard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "BoardRepr", into = "BoardRepr")]
pub struct BoardSpec {
    pub rows: usize,
    pub cols: usize,
    /// Square edge, meters.
    pub square_size: f64,
    /// Distance between the two observed corner planes, meters.
    pub thickness: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoardRepr {
    rows: usize,
    cols: usize,
    square_size: f64,
    thickness: f64,
}

impl TryFrom<BoardRepr> for BoardSpec {
    type Error = CalibError;
    fn try_from(r: BoardRepr) -> Result<Self, CalibError> {
        BoardSpec::new(r.rows, r.cols, r.square_size, r.thickness)
    }
}

impl From<BoardSpec> for BoardRepr {
    fn from(b: BoardSpec) -> Self {
        BoardRepr {
            rows: b.rows,
            cols: b.cols,
            square_size: b.square_size,
            thickness: b.thickness,
        }
    }
}

impl BoardSpec {
    pub fn new(rows: usize, cols: usize, square_size: f64, thickness: f64) -> Result<Self, CalibError> {
        if rows < 3 || cols < 3 {
            return Err(CalibError::InvalidBoard(format!("need at least 3x3 inner corners, got {rows}x{cols}")));
        }
        if !(square_size > 0.0 && square_size.is_finite()) {
            return Err(CalibError::InvalidBoard(format!("square size must be positive, got {square_size}")));
        }
        if !(thickness >= 0.0 && thickness.is_finite()) {
            return Err(CalibError::InvalidBoard(format!("thickness must be non-negative, got {thickness}")));
        }
        Ok(Self { rows, cols, square_size, thickness })
    }

    /// Front-face corner coordinates, row-major.
    pub fn corners(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(Vec2::new(j as f64 * self.square_size, i as f64 * self.square_size));
            }
        }
        out
    }

    /// The same physical corners expressed in the back-face frame, i.e. the
    /// `board_xy` a camera on the other side of the board reports for them.
    pub fn back_corners(&self, mirror: bool) -> Vec<Vec2> {
        let flip = chessboard_flip_transform(self, mirror);
        let to_back = flip.inverse();
        self.corners()
            .into_iter()
            .map(|c| {
                // The back pattern plane sits at front-frame z = -d.
                let p = to_back.apply(&Vec3::new(c.x, c.y, -self.thickness));
                Vec2::new(p.x, p.y)
            })
            .collect()
    }
}

/// One detected corner: its board-frame position and observed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerObservation {
    pub board_xy: [f64; 2],
    pub pixel: [f64; 2],
}

/// At least four non-collinear corner correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerObservations(Vec<CornerObservation>);

impl CornerObservations {
    pub fn new(obs: Vec<CornerObservation>) -> Result<Self, CalibError> {
        if obs.len() < 4 {
            return Err(CalibError::DegenerateConfiguration(format!(
                "need at least 4 correspondences, got {}",
                obs.len()
            )));
        }
        if obs.iter().any(|o| !o.board_xy.iter().chain(o.pixel.iter()).all(|v| v.is_finite())) {
            return Err(CalibError::DegenerateConfiguration("non-finite coordinate".into()));
        }
        if board_points_collinear(&obs) {
            return Err(CalibError::DegenerateConfiguration("board points are collinear".into()));
        }
        Ok(Self(obs))
    }

    pub fn as_slice(&self) -> &[CornerObservation] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads one JSON object per non-blank line.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, CalibError> {
        let mut obs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            obs.push(serde_json::from_str(&line).map_err(|source| CalibError::Parse { line: i + 1, source })?);
        }
        Self::new(obs)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), CalibError> {
        for o in &self.0 {
            serde_json::to_writer(&mut w, o).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn board_points_collinear(obs: &[CornerObservation]) -> bool {
    let n = obs.len() as f64;
    let (mx, my) = obs
        .iter()
        .fold((0.0, 0.0), |(a, b), o| (a + o.board_xy[0] / n, b + o.board_xy[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for o in obs {
        let dx = o.board_xy[0] - mx;
        let dy = o.board_xy[1] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Eigenvalues of the 2x2 scatter matrix.
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let l_max = 0.5 * tr + disc;
    let l_min = (det / l_max.max(f64::MIN_POSITIVE)).max(0.0);
    l_max <= 0.0 || l_min <= 1e-10 * l_max
}

/// Result of [`estimate_planar_pose`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPose {
    /// Maps board-frame points into the camera frame.
    pub board_to_camera: RigidTransform,
    /// Root-mean-square reprojection error, pixels.
    pub rms_px: f64,
    pub iterations: usize,
    /// RMS error of the initial estimate followed by every accepted iterate.
    pub rms_history: Vec<f64>,
}

/// Hartley normalization: centroid to origin, mean distance √2.
fn hartley(points: &[Vec2]) -> (Vec<Vec2>, Mat3) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    let t = Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    (points.iter().map(|p| (p - c) * s).collect(), t)
}

/// DLT homography `dst ~ H src` with Hartley normalization on both sides.
pub fn estimate_homography(src: &[Vec2], dst: &[Vec2]) -> Result<Mat3, CalibError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < 4 {
        return Err(CalibError::DegenerateConfiguration(format!("need 4 correspondences, got {n}")));
    }
    let (s, ts) = hartley(src);
    let (d, td) = hartley(dst);

    // Pad to at least 9 rows so the thin SVD still exposes the null vector.
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for k in 0..n {
        let (x, y) = (s[k].x, s[k].y);
        let (u, v) = (d[k].x, d[k].y);
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CalibError::DegenerateConfiguration("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if second <= 1e-10 * largest {
        return Err(CalibError::DegenerateConfiguration("homography DLT is rank deficient".into()));
    }
    let h = v_t.row(smallest);
    let hn = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("image points coincide".into()))?;
    let hm = td_inv * hn * ts;
    let scale = hm.norm();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CalibError::DegenerateConfiguration("zero homography".into()));
    }
    Ok(hm / scale)
}

/// Splits a board→normalized-image homography into a pose, picking the sign
/// that puts the board in front of the camera.
fn decompose_homography(h: &Mat3) -> Result<RigidTransform, CalibError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let n1 = h1.norm();
    let n2 = h2.norm();
    if n1 < 1e-15 || n2 < 1e-15 {
        return Err(CalibError::DegenerateConfiguration("homography columns vanish".into()));
    }
    let mut lambda = 2.0 / (n1 + n2);
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let m = Mat3::from_columns(&[r1, r2, r3]);
    Ok(RigidTransform::new(Rotation::orthonormalize(&m), h3 * lambda))
}

struct Problem<'a> {
    board: Vec<Vec3>,
    pixels: Vec<Vec2>,
    cam: &'a PinholeCamera,
}

impl Problem<'_> {
    /// Sum of squared pixel residuals; `None` if a point falls behind the camera.
    fn cost(&self, pose: &RigidTransform) -> Option<f64> {
        let mut c = 0.0;
        for (x, u) in self.board.iter().zip(&self.pixels) {
            let p = pose.apply(x);
            let px = self.cam.project(&p).ok()?;
            c += (px - u).norm_squared();
        }
        Some(c)
    }

    /// Gauss–Newton normal equations for the left-multiplied rotation
    /// increment and the translation increment.
    fn normal_equations(&self, pose: &RigidTransform) -> (Matrix6<f64>, Vector6<f64>) {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let (fx, fy) = (self.cam.fx, self.cam.fy);
        for (x, u) in self.board.iter().zip(&self.pixels) {
            let rx = pose.rotation.apply(x);
            let p = rx + pose.translation;
            let iz = 1.0 / p.z;
            let r = Vec2::new(fx * p.x * iz + self.cam.cx - u.x, fy * p.y * iz + self.cam.cy - u.y);
            // d(pixel)/d(p_cam)
            let jp = nalgebra::Matrix2x3::new(fx * iz, 0.0, -fx * p.x * iz * iz, 0.0, fy * iz, -fy * p.y * iz * iz);
            // d(p_cam)/d(omega) = -[R x]_x ; d(p_cam)/d(t) = I
            let jw = jp * (-rx.cross_matrix());
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jw);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        (jtj, jtr)
    }
}

fn apply_step(pose: &RigidTransform, step: &Vector6<f64>, alpha: f64) -> RigidTransform {
    let w = Vec3::new(step[0], step[1], step[2]) * alpha;
    let dt = Vec3::new(step[3], step[4], step[5]) * alpha;
    RigidTransform::new(Rotation::from_rotation_vector(&w).compose(&pose.rotation), pose.translation + dt)
}

/// Board→camera pose from planar corner observations: normalized DLT
/// homography, decomposition, then Gauss–Newton on pixel residuals with
/// backtracking.
pub fn estimate_planar_pose(obs: &CornerObservations, cam: &PinholeCamera) -> Result<PlanarPose, CalibError> {
    let k_inv = cam.k_inverse();
    let board2: Vec<Vec2> = obs.0.iter().map(|o| Vec2::from(o.board_xy)).collect();
    let pixels: Vec<Vec2> = obs.0.iter().map(|o| Vec2::from(o.pixel)).collect();
    let normalized: Vec<Vec2> = pixels
        .iter()
        .map(|u| {
            let m = k_inv * Vec3::new(u.x, u.y, 1.0);
            Vec2::new(m.x, m.y)
        })
        .collect();

    let h = estimate_homography(&board2, &normalized)?;
    let mut pose = decompose_homography(&h)?;

    let problem = Problem {
        board: board2.iter().map(|b| Vec3::new(b.x, b.y, 0.0)).collect(),
        pixels,
        cam,
    };
    let n = problem.board.len() as f64;
    let mut cost = problem
        .cost(&pose)
        .ok_or_else(|| CalibError::DegenerateConfiguration("initial pose places corners behind the camera".into()))?;
    let mut history = vec![(cost / n).sqrt()];
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&pose);
        let step = match jtj.cholesky() {
            Some(ch) => ch.solve(&-jtr),
            None => match jtj.try_inverse() {
                Some(inv) => inv * -jtr,
                None => return Err(CalibError::DegenerateConfiguration("singular Gauss-Newton system".into())),
            },
        };
        if !step.iter().all(|v| v.is_finite()) {
            return Err(CalibError::NoConvergence("non-finite Gauss-Newton step".into()));
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let cand = apply_step(&pose, &step, alpha);
            if let Some(c) = problem.cost(&cand) {
                if c < cost {
                    accepted = Some((cand, c));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            // No descent along the Gauss-Newton direction: we are at the
            // floating point floor of the cost.
            last_step = 0.0;
            break;
        };
        pose = cand;
        cost = c;
        history.push((cost / n).sqrt());
        last_step = step.norm() * alpha;
        if last_step < STEP_TOLERANCE {
            break;
        }
    }

    if last_step > 1e-6 && iterations >= MAX_ITERATIONS {
        return Err(CalibError::NoConvergence(format!(
            "step norm {last_step:.3e} after {MAX_ITERATIONS} iterations"
        )));
    }
    if pose.translation.z <= 0.0 || !cost.is_finite() {
        return Err(CalibError::NoConvergence("refined pose places the board behind the camera".into()));
    }

    Ok(PlanarPose {
        board_to_camera: pose,
        rms_px: (cost / n).sqrt(),
        iterations,
        rms_history: history,
    })
}

/// Back-face → front-face board transform `p_front = R p_back + t`.
///
/// A half turn about the board x-axis, `diag(1, −1, −1)`, or about the y-axis,
/// `diag(−1, 1, −1)`, when the back camera delivers mirrored images. The
/// translation is `(0, 0, −d)` for board thickness `d`.
pub fn chessboard_flip_transform(spec: &BoardSpec, mirror: bool) -> RigidTransform {
    let diag = if mirror {
        Vec3::new(-1.0, 1.0, -1.0)
    } else {
        Vec3::new(1.0, -1.0, -1.0)
    };
    RigidTransform::new(
        Rotation::new_unchecked(Mat3::from_diagonal(&diag)),
        Vec3::new(0.0, 0.0, -spec.thickness),
    )
}

/// The depth→DMS extrinsics `{R_rot, t_rot}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCameraCalibration {
    pub rot: RigidTransform,
}

/// Chains the DMS board pose, the board flip and the inverse depth board pose.
///
/// `R_rot = R_dms R_chess R_depth⁻¹`,
/// `t_rot = −R_dms R_chess R_depth⁻¹ t_depth + R_dms t_chess + t_dms`.
pub fn compose_cross_camera(
    dms_pose: &RigidTransform,
    depth_pose: &RigidTransform,
    flip: &RigidTransform,
) -> CrossCameraCalibration {
    let r_dms = dms_pose.rotation.matrix();
    let r_chess = flip.rotation.matrix();
    let r_depth_inv = depth_pose.rotation.transpose().into_matrix();
    let chain = r_dms * r_chess * r_depth_inv;
    let t_rot = -(chain * depth_pose.translation) + r_dms * flip.translation + dms_pose.translation;
    CrossCameraCalibration {
        rot: RigidTransform::new(Rotation::new_unchecked(chain), t_rot),
    }
}

/// `p_dms = R_rot p_depth + t_rot`.
pub fn transfer_point(calib: &CrossCameraCalibration, p_depth: &Vec3) -> Vec3 {
    calib.rot.apply(p_depth)
}

/// Output of [`calibrate_two_sided`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub calibration: CrossCameraCalibration,
    pub dms_pose: PlanarPose,
    pub depth_pose: PlanarPose,
    /// RMS reprojection error over both cameras' corners, pixels.
    pub residual_px: f64,
}

/// Full transparent-board calibration from the two cameras' corner sets.
pub fn calibrate_two_sided(
    dms_obs: &CornerObservations,
    dms_cam: &PinholeCamera,
    depth_obs: &CornerObservations,
    depth_cam: &PinholeCamera,
    board: &BoardSpec,
    mirror: bool,
) -> Result<CalibrationResult, CalibError> {
    let dms_pose = estimate_planar_pose(dms_obs, dms_cam)?;
    let depth_pose = estimate_planar_pose(depth_obs, depth_cam)?;
    let flip = chessboard_flip_transform(board, mirror);
    let calibration = compose_cross_camera(&dms_pose.board_to_camera, &depth_pose.board_to_camera, &flip);
    let n1 = dms_obs.len() as f64;
    let n2 = depth_obs.len() as f64;
    let residual_px =
        ((dms_pose.rms_px.powi(2) * n1 + depth_pose.rms_px.powi(2) * n2) / (n1 + n2)).sqrt();
    Ok(CalibrationResult {
        calibration,
        dms_pose,
        depth_pose,
        residual_px,
    })
}

/// On-disk calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    #[serde(rename = "R_rot")]
    pub r_rot: [[f64; 3]; 3],
    pub t_rot: [f64; 3],
    pub residual_px: f64,
}

impl CalibrationFile {
    pub fn from_result(r: &CalibrationResult) -> Self {
        Self {
            r_rot: crate::geom::mat3_to_rows(r.calibration.rot.rotation.matrix()),
            t_rot: r.calibration.rot.translation.into(),
            residual_px: r.residual_px,
        }
    }

    pub fn calibration(&self) -> Result<CrossCameraCalibration, CalibError> {
        let rotation = Rotation::new(crate::geom::mat3_from_rows(&self.r_rot))?;
        Ok(CrossCameraCalibration {
            rot: RigidTransform::new(rotation, Vec3::from(self.t_rot)),
        })
    }
}

/// Combines several board placements: chordal mean of the rotations
/// (projected back onto SO(3)) and arithmetic mean of the translations.
pub fn average_calibrations(calibs: &[CrossCameraCalibration]) -> Result<CrossCameraCalibration, CalibError> {
    if calibs.is_empty() {
        return Err(CalibError::DegenerateConfiguration("no calibrations to average".into()));
    }
    let n = calibs.len() as f64;
    let m: Mat3 = calibs.iter().map(|c| *c.rot.rotation.matrix()).sum();
    let t: Vec3 = calibs.iter().map(|c| c.rot.translation).sum::<Vec3>() / n;
    Ok(CrossCameraCalibration {
        rot: RigidTransform::new(Rotation::orthonormalize(&m), t),
    })
}
