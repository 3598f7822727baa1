pub mod annotate;
pub mod calibrate;
pub mod eval;
pub mod gradcheck;
pub mod normalize;
pub mod report;
pub mod simulate;
pub mod train;
