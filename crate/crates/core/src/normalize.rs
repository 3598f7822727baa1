//! Perspective normalization: rotate a virtual camera onto the face center,
//! rescale to a fixed distance, and warp the image with `H = K_n S R K_o⁻¹`.
//!
//! The virtual camera keeps the original camera's x-axis direction as far as
//! possible (`z` toward the face, `y = z × (1,0,0)`, `x = y × z`), so faces are
//! never rolled to follow the head. The head-pose based variant, which takes
//! the x-axis from the head frame, is kept for comparison.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::GazeLabel;
use crate::geom::{GeomError, Mat3, PinholeCamera, Rotation, Vec3};
use crate::raster::{Raster, RasterError};

/// Face centers closer than this to the camera center are rejected.
pub const MIN_FACE_DISTANCE: f64 = 1e-6;
/// Minimum sine of the angle between the face direction and the reference
/// x-axis.
pub const PARALLEL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("face center is at the camera center")]
    FaceAtOrigin,
    #[error("face direction is parallel to the reference x-axis")]
    DegenerateDirection,
    #[error("warp homography is singular (det {0:.3e})")]
    SingularHomography(f64),
    #[error("invalid normalization config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMethod {
    /// Virtual x-axis from the camera.
    #[default]
    Ours,
    /// Virtual x-axis from the head frame.
    Legacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    /// Normalized face distance, meters.
    pub d_norm: f64,
    pub virtual_fx: f64,
    pub virtual_fy: f64,
    pub out_width: u32,
    pub out_height: u32,
    pub method: NormalizationMethod,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            d_norm: 0.6,
            virtual_fx: 960.0,
            virtual_fy: 960.0,
            out_width: 224,
            out_height: 224,
            method: NormalizationMethod::Ours,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<(), NormalizeError> {
        if !(self.d_norm > 0.0 && self.d_norm.is_finite()) {
            return Err(NormalizeError::InvalidConfig(format!("d_norm must be positive, got {}", self.d_norm)));
        }
        if self.out_width == 0 || self.out_height == 0 {
            return Err(NormalizeError::InvalidConfig("output size must be non-zero".into()));
        }
        self.virtual_camera()
            .map(|_| ())
            .map_err(|e| NormalizeError::InvalidConfig(e.to_string()))
    }

    /// Virtual camera with the principal point at the image center.
    pub fn virtual_camera(&self) -> Result<PinholeCamera, GeomError> {
        PinholeCamera::new(
            self.virtual_fx,
            self.virtual_fy,
            self.out_width as f64 / 2.0,
            self.out_height as f64 / 2.0,
            self.out_width,
            self.out_height,
        )
    }
}

fn face_direction(face_center: &Vec3) -> Result<Vec3, NormalizeError> {
    let n = face_center.norm();
    if !(n > MIN_FACE_DISTANCE) {
        return Err(NormalizeError::FaceAtOrigin);
    }
    Ok(face_center / n)
}

fn rotation_from_z_and_x(z: &Vec3, x_ref: &Vec3) -> Result<Rotation, NormalizeError> {
    let y = z.cross(x_ref);
    let ny = y.norm();
    if ny <= PARALLEL_TOLERANCE * x_ref.norm() {
        return Err(NormalizeError::DegenerateDirection);
    }
    let y = y / ny;
    let x = y.cross(z).normalize();
    Ok(Rotation::from_rows(&x, &y, z)?)
}

/// Rows `[x; y; z]` with `z` toward the face and `x` from the camera x-axis.
pub fn normalization_rotation(face_center: &Vec3) -> Result<Rotation, NormalizeError> {
    let z = face_direction(face_center)?;
    rotation_from_z_and_x(&z, &Vec3::x())
}

/// Head-pose based variant: the reference x-axis is the head's x-axis, the
/// first column of `head_rotation` (head→camera).
pub fn normalization_rotation_legacy(head_rotation: &Rotation, face_center: &Vec3) -> Result<Rotation, NormalizeError> {
    let z = face_direction(face_center)?;
    rotation_from_z_and_x(&z, &head_rotation.column(0))
}

/// `diag(1, 1, d_norm / |o|)`.
pub fn scale_matrix(face_center: &Vec3, d_norm: f64) -> Result<Mat3, NormalizeError> {
    let n = face_center.norm();
    if !(n > MIN_FACE_DISTANCE) {
        return Err(NormalizeError::FaceAtOrigin);
    }
    Ok(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d_norm / n)))
}

/// `H = K_n S R K_o⁻¹`, mapping original pixels to normalized pixels.
pub fn warp_homography(k_o: &PinholeCamera, k_n: &PinholeCamera, s: &Mat3, r: &Rotation) -> Mat3 {
    k_n.k_matrix() * s * r.matrix() * k_o.k_inverse()
}

/// Inverse-maps every output pixel through `h⁻¹` and samples bilinearly;
/// samples falling outside the source are 0.
pub fn warp_with_homography(img: &Raster, h: &Mat3, out_width: usize, out_height: usize) -> Result<Raster, NormalizeError> {
    let det = h.determinant();
    if !(det.abs() > 1e-12) {
        return Err(NormalizeError::SingularHomography(det));
    }
    let h_inv = h.try_inverse().ok_or(NormalizeError::SingularHomography(det))?;
    Ok(Raster::from_fn(out_width, out_height, |x, y| {
        let p = h_inv * Vec3::new(x as f64, y as f64, 1.0);
        if p.z.abs() < f64::EPSILON {
            return 0.0;
        }
        img.sample_bilinear(p.x / p.z, p.y / p.z).unwrap_or(0.0)
    }))
}

/// Warps `img` (taken with `k_o`) into the normalized view of size `k_n`.
pub fn warp_image(
    img: &Raster,
    k_o: &PinholeCamera,
    k_n: &PinholeCamera,
    s: &Mat3,
    r: &Rotation,
) -> Result<Raster, NormalizeError> {
    img.ensure_shape(k_o.width as usize, k_o.height as usize)?;
    let h = warp_homography(k_o, k_n, s, r);
    warp_with_homography(img, &h, k_n.width as usize, k_n.height as usize)
}

/// `g_n = R g_o`.
pub fn transform_gaze(r: &Rotation, g_o: &GazeLabel) -> GazeLabel {
    g_o.rotated(r)
}

/// `g_o = Rᵀ g_n`.
pub fn inverse_transform_gaze(r: &Rotation, g_n: &GazeLabel) -> GazeLabel {
    g_n.rotated(&r.transpose())
}

/// Everything needed to map one sample into the normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationResult {
    pub rotation: Rotation,
    pub scale: Mat3,
    pub homography: Mat3,
    pub virtual_camera: PinholeCamera,
    pub gaze: Option<GazeLabel>,
}

/// Computes the normalization of one sample. `head_rotation` is required
/// only for [`NormalizationMethod::Legacy`].
pub fn normalize_sample(
    face_center: &Vec3,
    camera: &PinholeCamera,
    gaze: Option<&GazeLabel>,
    head_rotation: Option<&Rotation>,
    cfg: &NormalizationConfig,
) -> Result<NormalizationResult, NormalizeError> {
    let rotation = match cfg.method {
        NormalizationMethod::Ours => normalization_rotation(face_center)?,
        NormalizationMethod::Legacy => {
            let head = head_rotation
                .ok_or_else(|| NormalizeError::InvalidConfig("legacy normalization needs a head rotation".into()))?;
            normalization_rotation_legacy(head, face_center)?
        }
    };
    let scale = scale_matrix(face_center, cfg.d_norm)?;
    let virtual_camera = cfg.virtual_camera()?;
    Ok(NormalizationResult {
        homography: warp_homography(camera, &virtual_camera, &scale, &rotation),
        gaze: gaze.map(|g| transform_gaze(&rotation, g)),
        rotation,
        scale,
        virtual_camera,
    })
}
