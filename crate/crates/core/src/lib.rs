//! Geometry, cross-camera calibration, gaze annotation, normalization,
//! tri-plane features, metrics and a synthetic cabin for in-vehicle gaze
//! estimation.

pub mod annotate;
pub mod calib;
pub mod geom;
pub mod metrics;
pub mod normalize;
pub mod raster;
pub mod synthcab;
pub mod triplane;
