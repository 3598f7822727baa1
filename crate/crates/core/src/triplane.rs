//! Gaze-ray intersections with the three coordinate planes and their
//! sinusoidal encoding, used as positional features for zone classification.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Rays with `|g·n|` at or below this are treated as parallel to the plane.
pub const PARALLEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriPlaneConfig {
    /// Number of frequency bands per coordinate.
    pub bands: usize,
    /// Length scale (meters) dividing coordinates before encoding.
    pub scale: f64,
    /// Reject intersections behind the face (`t < 0`).
    pub forward_only: bool,
}

impl Default for TriPlaneConfig {
    fn default() -> Self {
        Self {
            bands: 8,
            scale: 2.0,
            forward_only: false,
        }
    }
}

impl TriPlaneConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.bands == 0 {
            return Err("triplane.bands must be at least 1".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(format!("triplane.scale must be positive, got {}", self.scale));
        }
        Ok(())
    }

    /// Length of [`encode_hit`]'s output.
    pub fn encoded_len(&self) -> usize {
        3 * (3 * 2 * self.bands + 1)
    }
}

/// Intersection with one coordinate plane: the point and its signed ray
/// parameter `t` (`p = o + t g`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneHit {
    pub point: [f64; 3],
    pub t: f64,
}

/// Hits on the planes `x = 0`, `y = 0`, `z = 0`, in that order. `None`
/// marks a plane the ray does not usefully cross.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TriPlaneHit {
    pub hits: [Option<PlaneHit>; 3],
}

impl TriPlaneHit {
    pub fn point(&self, axis: usize) -> Option<Vec3> {
        self.hits[axis].map(|h| Vec3::from(h.point))
    }

    pub fn is_valid(&self, axis: usize) -> bool {
        self.hits[axis].is_some()
    }

    /// Points with invalid planes replaced by the origin sentinel.
    pub fn points_or_sentinel(&self) -> [Vec3; 3] {
        std::array::from_fn(|i| self.point(i).unwrap_or_else(Vec3::zeros))
    }
}

/// Intersects the ray `o + t g` with each coordinate plane.
pub fn intersect_triplane(o: &Vec3, g: &Vec3) -> TriPlaneHit {
    intersect_triplane_with(o, g, false)
}

pub fn intersect_triplane_with(o: &Vec3, g: &Vec3, forward_only: bool) -> TriPlaneHit {
    let hits = std::array::from_fn(|i| {
        let gn = g[i];
        if gn.abs() <= PARALLEL_TOLERANCE {
            return None;
        }
        let t = -o[i] / gn;
        if forward_only && t < 0.0 {
            return None;
        }
        let p = o + g * t;
        Some(PlaneHit { point: p.into(), t })
    });
    TriPlaneHit { hits }
}

/// `[sin(2ʲπ c / scale), cos(2ʲπ c / scale)]` for `j = 0..bands`, for every
/// coordinate of every point, in point-major order.
pub fn positional_encoding(points: &[Vec3], bands: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * 3 * 2 * bands);
    for p in points {
        for c in p.iter() {
            encode_scalar(*c, bands, scale, &mut out);
        }
    }
    out
}

fn encode_scalar(c: f64, bands: usize, scale: f64, out: &mut Vec<f64>) {
    let base = PI * c / scale;
    let mut freq = 1.0;
    for _ in 0..bands {
        let (s, co) = (freq * base).sin_cos();
        out.push(s);
        out.push(co);
        freq *= 2.0;
    }
}

/// Per plane: the encoded point (sentinel origin when invalid) followed by a
/// validity flag in `{0, 1}`.
pub fn encode_hit(hit: &TriPlaneHit, cfg: &TriPlaneConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.encoded_len());
    for (i, p) in hit.points_or_sentinel().iter().enumerate() {
        out.extend(positional_encoding(std::slice::from_ref(p), cfg.bands, cfg.scale));
        out.push(if hit.is_valid(i) { 1.0 } else { 0.0 });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, UnitSphere};

    #[test]
    fn axis_aligned_ray() {
        let hit = intersect_triplane(&Vec3::new(1.0, 1.0, 1.0), &Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(hit.point(0), Some(Vec3::new(0.0, 1.0, 1.0)));
        assert!(!hit.is_valid(1) && !hit.is_valid(2));
    }

    #[test]
    fn ray_through_origin() {
        let g = -Vec3::new(1.0, 1.0, 1.0).normalize();
        let hit = intersect_triplane(&Vec3::new(1.0, 1.0, 1.0), &g);
        for i in 0..3 {
            assert!(hit.point(i).unwrap().amax() < 1e-15);
        }
    }

    #[test]
    fn forward_only_drops_backward_hits() {
        let o = Vec3::new(1.0, 1.0, 1.0);
        let g = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(intersect_triplane(&o, &g).hits[0].unwrap().t, -1.0);
        assert!(!intersect_triplane_with(&o, &g, true).is_valid(0));
    }

    #[test]
    fn random_rays_hit_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let o = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let g = Vec3::from(UnitSphere.sample(&mut rng));
            let hit = intersect_triplane(&o, &g);
            for i in 0..3 {
                if let Some(p) = hit.point(i) {
                    assert!(p[i].abs() < 1e-9);
                    assert!((p - o).cross(&g).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn encoding_of_origin() {
        let enc = positional_encoding(&[Vec3::zeros()], 4, 2.0);
        assert_eq!(enc.len(), 24);
        for pair in enc.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
    }

    #[test]
    fn lowest_band_has_period_two_scales() {
        let scale = 1.7;
        for c in [-3.2, 0.0, 0.4, 5.5] {
            let a = positional_encoding(&[Vec3::new(c, 0.0, 0.0)], 1, scale);
            let b = positional_encoding(&[Vec3::new(c + 2.0 * scale, 0.0, 0.0)], 1, scale);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn encoded_hit_layout() {
        let cfg = TriPlaneConfig::default();
        let hit = intersect_triplane(&Vec3::new(1.0, 1.0, 1.0), &Vec3::new(-1.0, 0.0, 0.0));
        let enc = encode_hit(&hit, &cfg);
        assert_eq!(enc.len(), 147);
        let per_plane = 3 * 2 * cfg.bands + 1;
        assert_eq!(enc[per_plane - 1], 1.0);
        assert_eq!(enc[2 * per_plane - 1], 0.0);
        assert_eq!(enc[3 * per_plane - 1], 0.0);
        assert!(enc.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn encoding_is_bounded(x in -1e3..1e3f64, y in -1e3..1e3f64, z in -1e3..1e3f64, bands in 1usize..10) {
            for v in positional_encoding(&[Vec3::new(x, y, z)], bands, 2.0) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
