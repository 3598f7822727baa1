//! Rigid-body geometry, pinhole projection, rays and planes.
//!
//! Rotations are stored as 3×3 matrices. Lengths are meters; angles are
//! radians internally and degrees wherever a function name says `_deg`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Maximum deviation from orthonormality (and from det = +1) accepted for a
/// [`Rotation`].
pub const ROTATION_TOLERANCE: f64 = 1e-10;

/// Points with `z` at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("direction vector has zero length")]
    ZeroDirection,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates `m` against [`ROTATION_TOLERANCE`].
    pub fn new(m: Mat3) -> Result<Self, GeomError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("rotation"));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).amax();
        let det = m.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeomError::NotARotation { ortho, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has constructed to be a rotation.
    pub(crate) fn new_unchecked(m: Mat3) -> Self {
        debug_assert!(
            (m.transpose() * m - Mat3::identity()).amax() < 1e-8,
            "new_unchecked on a non-rotation"
        );
        Self(m)
    }

    /// Builds a rotation whose rows are `x`, `y`, `z`.
    pub fn from_rows(x: &Vec3, y: &Vec3, z: &Vec3) -> Result<Self, GeomError> {
        Self::new(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
    }

    /// Rodrigues' formula. `axis` need not be normalized; a zero axis gives
    /// the identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::from_rotation_vector(&(axis * (angle / n)))
    }

    /// Exponential map of a rotation vector (axis × angle in radians).
    pub fn from_rotation_vector(w: &Vec3) -> Self {
        let theta = w.norm();
        let k = w.cross_matrix();
        let (a, b) = if theta < 1e-8 {
            // Taylor expansions of sin(t)/t and (1 - cos t)/t^2.
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        let m = Mat3::identity() + k * a + k * k * b;
        // Re-project to kill the O(eps) drift of the closed form.
        Self::orthonormalize(&m)
    }

    /// Nearest rotation to `m` in the Frobenius sense (polar decomposition).
    pub fn orthonormalize(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    /// Rotation that maps `a` onto `b` (both non-zero) with the smallest angle.
    pub fn between(a: &Vec3, b: &Vec3) -> Self {
        let a = a.normalize();
        let b = b.normalize();
        let axis = a.cross(&b);
        let s = axis.norm();
        let c = a.dot(&b);
        if s < 1e-15 {
            if c > 0.0 {
                return Self::identity();
            }
            // Antiparallel: any axis orthogonal to `a`.
            let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            return Self::from_axis_angle(&a.cross(&helper), std::f64::consts::PI);
        }
        Self::from_axis_angle(&axis, s.atan2(c))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Same as [`Rotation::transpose`].
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Row `i` of the matrix; for a camera rotation `[x; y; z]` these are the
    /// camera axes expressed in the source frame.
    pub fn row(&self, i: usize) -> Vec3 {
        self.0.row(i).transpose()
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        // atan2 keeps full precision near 0 and π, unlike acos of the trace.
        let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let sin = 0.5 * vee.norm();
        let cos = 0.5 * (m.trace() - 1.0);
        sin.atan2(cos.clamp(-1.0, 1.0))
    }

    /// Inverse of [`Rotation::from_rotation_vector`] (angle in `[0, π]`).
    pub fn to_rotation_vector(&self) -> Vec3 {
        let m = &self.0;
        let theta = self.angle();
        let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        if theta < 1e-8 {
            return vee * 0.5;
        }
        if std::f64::consts::PI - theta > 1e-6 {
            return vee * (theta / (2.0 * theta.sin()));
        }
        // Near π the skew part vanishes; read the axis off the symmetric part.
        let b = (m + Mat3::identity()) * 0.5;
        let (i, _) = b.diagonal().argmax();
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Geodesic distance between two rotations, in degrees, in `[0, 180]`.
pub fn rotation_geodesic_deg(a: &Rotation, b: &Rotation) -> f64 {
    a.transpose().compose(b).angle().to_degrees().clamp(0.0, 180.0)
}

/// `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// Rotates a direction; translation does not apply.
    pub fn apply_direction(&self, d: &Vec3) -> Vec3 {
        self.rotation.apply(d)
    }

    pub fn inverse(&self) -> Self {
        invert_rigid(self)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &RigidTransform) -> Self {
        compose_rigid(self, other)
    }
}

/// `(a ∘ b)(p) = a.R (b.R p + b.t) + a.t`.
pub fn compose_rigid(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation.compose(&b.rotation),
        translation: a.rotation.apply(&b.translation) + a.translation,
    }
}

pub fn invert_rigid(a: &RigidTransform) -> RigidTransform {
    let r_t = a.rotation.transpose();
    RigidTransform {
        translation: -r_t.apply(&a.translation),
        rotation: r_t,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

pub(crate) fn mat3_to_rows(m: &Mat3) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

pub(crate) fn mat3_from_rows(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformRepr {
            r: mat3_to_rows(self.rotation.matrix()),
            t: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        let rotation = Rotation::new(mat3_from_rows(&repr.r)).map_err(serde::de::Error::custom)?;
        Ok(Self::new(rotation, Vec3::from(repr.t)))
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        mat3_to_rows(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Rotation::new(mat3_from_rows(&rows)).map_err(serde::de::Error::custom)
    }
}

/// Ideal pinhole camera. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<CameraRepr> for PinholeCamera {
    type Error = GeomError;
    fn try_from(r: CameraRepr) -> Result<Self, GeomError> {
        PinholeCamera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<PinholeCamera> for CameraRepr {
    fn from(c: PinholeCamera) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn k_matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn project(&self, p: &Vec3) -> Result<Vec2, GeomError> {
        if p.z <= MIN_DEPTH {
            return Err(GeomError::BehindCamera(p.z));
        }
        Ok(Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Back-projects a pixel to the point at camera-frame depth `depth`.
    pub fn unproject(&self, px: &Vec2, depth: f64) -> Vec3 {
        Vec3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Unit viewing ray through a pixel.
    pub fn pixel_ray(&self, px: &Vec2) -> Vec3 {
        Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0).normalize()
    }

    /// True when the pixel lies within `[0, width-1] × [0, height-1]`.
    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= (self.width - 1) as f64 && px.y <= (self.height - 1) as f64
    }
}

/// Half-line (or full line, for signed parameters) `origin + s·direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeomError> {
        let n = direction.norm();
        if !n.is_finite() || !origin.iter().all(|v| v.is_finite()) {
            return Err(GeomError::NonFinite("ray"));
        }
        if n == 0.0 {
            return Err(GeomError::ZeroDirection);
        }
        Ok(Self { origin, direction: direction / n })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vec3 {
        &self.direction
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }
}

/// `{p : p·normal = offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeomError> {
        let n = normal.norm();
        if !n.is_finite() || !offset.is_finite() {
            return Err(GeomError::NonFinite("plane"));
        }
        if n == 0.0 {
            return Err(GeomError::ZeroDirection);
        }
        Ok(Self { normal: normal / n, offset: offset / n })
    }

    /// Coordinate plane through the origin orthogonal to axis `axis` (0..3).
    pub fn coordinate(axis: usize) -> Self {
        let mut normal = Vec3::zeros();
        normal[axis] = 1.0;
        Self { normal, offset: 0.0 }
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        p.dot(&self.normal) - self.offset
    }

    /// Signed ray parameter of the intersection, or `None` when
    /// `|direction·normal| <= parallel_tol`.
    pub fn intersect(&self, ray: &Ray, parallel_tol: f64) -> Option<f64> {
        let denom = ray.direction.dot(&self.normal);
        if denom.abs() <= parallel_tol {
            return None;
        }
        Some(-self.signed_distance(&ray.origin) / denom)
    }
}
