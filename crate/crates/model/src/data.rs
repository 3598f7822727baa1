//! Turning annotated records into model samples.

use cabingaze_core::annotate::{yawpitch_from_vec, SampleRecord};
use cabingaze_core::geom::Rotation;
use cabingaze_core::normalize::NormalizationConfig;
use cabingaze_core::synthcab::{render_views, RenderOptions, SampleViews};

use crate::config::Preset;
use crate::model::{Labels, Sample};
use crate::ModelError;

fn yawpitch_rad(v: &cabingaze_core::geom::Vec3) -> [f64; 2] {
    let (y, p) = yawpitch_from_vec(v).expect("unit gaze");
    [y.to_radians(), p.to_radians()]
}

/// Labels in both spaces: `g_o` from the record, `g_n = R g_o`.
pub fn labels_for(record: &SampleRecord, rotation: &Rotation) -> Labels {
    let g_o = record.gaze.vector();
    let g_n = rotation.apply(&g_o).normalize();
    Labels {
        gaze_o: Some(yawpitch_rad(&g_o)),
        gaze_n: Some(yawpitch_rad(&g_n)),
        zone: Some(record.zone),
    }
}

pub fn sample_from_views(record: &SampleRecord, views: SampleViews) -> Sample {
    Sample {
        labels: labels_for(record, &views.rotation),
        original: views.original,
        normalized: views.normalized,
        rotation: views.rotation,
        face_center: record.face_center(),
    }
}

/// Renders both views of `record` and builds its sample.
pub fn render_sample(record: &SampleRecord, norm: &NormalizationConfig, opts: &RenderOptions) -> Result<Sample, ModelError> {
    let views = render_views(record, norm, opts)?;
    Ok(sample_from_views(record, views))
}

/// Normalization matching a preset's input size. The tiny preset uses a
/// short virtual focal length so the face fills the 32×32 view.
pub fn normalization_for(preset: Preset) -> NormalizationConfig {
    match preset {
        Preset::Tiny => NormalizationConfig {
            virtual_fx: 100.0,
            virtual_fy: 100.0,
            out_width: 32,
            out_height: 32,
            ..NormalizationConfig::default()
        },
        Preset::Paper => NormalizationConfig::default(),
    }
}

/// A rendered synthetic dataset with the records it came from.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub records: Vec<SampleRecord>,
    pub samples: Vec<Sample>,
}

/// Generates the default cabin for `seed`, samples `spec.frames` frames and
/// renders them at the preset's input size.
pub fn synthetic_set(
    seed: u64,
    spec: &cabingaze_core::synthcab::DatasetSpec,
    norm: &NormalizationConfig,
    opts: &RenderOptions,
) -> Result<SyntheticSet, ModelError> {
    use cabingaze_core::synthcab::{generate_cabin, generate_dataset, CabinLayout, CameraPair};
    use rand::SeedableRng;

    let scene = generate_cabin(seed, &CabinLayout::default(), &CameraPair::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let frames = generate_dataset(&scene, spec, &mut rng)?;
    let mut records = Vec::with_capacity(frames.len());
    let mut samples = Vec::with_capacity(frames.len());
    for f in frames {
        samples.push(render_sample(&f.record, norm, opts)?);
        records.push(f.record);
    }
    Ok(SyntheticSet { records, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cabingaze_core::synthcab::DatasetSpec;

    #[test]
    fn labels_agree_across_spaces() {
        let spec = DatasetSpec { subjects: 2, frames: 6, ..DatasetSpec::default() };
        let set = synthetic_set(5, &spec, &normalization_for(Preset::Tiny), &RenderOptions::default()).unwrap();
        assert_eq!(set.samples.len(), 6);
        for (r, s) in set.records.iter().zip(&set.samples) {
            let go = crate::model::yawpitch_to_vec(s.labels.gaze_o.unwrap());
            let gn = crate::model::yawpitch_to_vec(s.labels.gaze_n.unwrap());
            assert!((go - r.gaze.vector()).norm() < 1e-12);
            assert!((s.rotation.transpose().apply(&gn) - go).norm() < 1e-12);
            assert_eq!(s.labels.zone, Some(r.zone));
            assert_eq!((s.original.width(), s.normalized.height()), (32, 32));
        }
    }
}
