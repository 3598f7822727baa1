//! Minibatch SGD with optional momentum and gradient-norm clipping, plus the
//! per-head evaluation used to compare prediction heads.

use cabingaze_core::annotate::Zone;
use cabingaze_core::metrics::angular_error_deg;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{loss_gradients, loss_total};
use crate::model::{yawpitch_to_vec, GazeModel, GazeTerm, Outputs, Sample, StreamKind, ZoneTerm, GAZE_TERMS, ZONE_TERMS};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Seeds parameter initialization and the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.003,
            momentum: 0.9,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch.
    pub loss: f64,
    /// Mean angular error (degrees) of the fused head in the original space,
    /// measured after the epoch.
    pub mean_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochStats>,
}

impl TrainingCurve {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Mean loss and its gradient over `batch`.
pub fn batch_gradient(model: &GazeModel, p: &[f64], batch: &[&Sample]) -> Result<(f64, Vec<f64>), ModelError> {
    let mut g = vec![0.0; p.len()];
    let mut loss = 0.0;
    let w = &model.cfg.loss;
    for s in batch {
        let f = model.forward(p, s)?;
        loss += loss_total(&f.outputs, &s.labels, w)?.total;
        let (dg, dl) = loss_gradients(&f.outputs, &s.labels, w)?;
        model.backward(p, &f.cache, &dg, &dl, &mut g);
    }
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok((loss * inv, g))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trains `params` in place and returns the per-epoch curve.
pub fn fit(model: &GazeModel, samples: &[Sample], params: &mut [f64], cfg: &TrainConfig) -> Result<TrainingCurve, ModelError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut velocity = vec![0.0; params.len()];
    let mut curve = TrainingCurve::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (loss, mut g) = batch_gradient(model, params, &batch)?;
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::DivergenceDetected { epoch, step, loss });
            }
            if let Some(c) = cfg.clip_norm {
                let n = l2_norm(&g);
                if n > c {
                    g.iter_mut().for_each(|v| *v *= c / n);
                }
            }
            for ((p, v), gi) in params.iter_mut().zip(&mut velocity).zip(&g) {
                *v = cfg.momentum * *v + gi;
                *p -= cfg.learning_rate * *v;
            }
            sum += loss;
            batches += 1;
        }
        let eval = evaluate(model, params, samples)?;
        curve.epochs.push(EpochStats {
            epoch,
            loss: sum / batches as f64,
            mean_error_deg: eval.gaze_error_deg[GazeTerm::Fused.index()],
        });
    }
    Ok(curve)
}

/// Per-head quality over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEvaluation {
    pub n_samples: usize,
    /// Mean angular error per gaze term, degrees, every prediction mapped
    /// to the original space first.
    pub gaze_error_deg: [f64; GAZE_TERMS],
    /// Accuracy of the positional, visual and fused zone heads.
    pub zone_accuracy: [f64; ZONE_TERMS],
    pub mean_loss: f64,
}

/// Original-space gaze direction of one head.
pub fn head_direction(out: &Outputs, t: GazeTerm, s: &Sample) -> cabingaze_core::geom::Vec3 {
    let v = yawpitch_to_vec(out.gaze_of(t));
    match t.space() {
        StreamKind::Original => v,
        StreamKind::Normalized => s.rotation.transpose().apply(&v).normalize(),
    }
}

pub fn evaluate(model: &GazeModel, params: &[f64], samples: &[Sample]) -> Result<HeadEvaluation, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut err = [0.0; GAZE_TERMS];
    let mut correct = [0usize; ZONE_TERMS];
    let mut loss = 0.0;
    for s in samples {
        let out = model.forward(params, s)?.outputs;
        loss += loss_total(&out, &s.labels, &model.cfg.loss)?.total;
        let truth = yawpitch_to_vec(s.labels.gaze_o.ok_or(ModelError::LabelMissing("gaze_o"))?);
        let zone: Zone = s.labels.zone.ok_or(ModelError::LabelMissing("zone"))?;
        for t in GazeTerm::ALL {
            let e = angular_error_deg(&head_direction(&out, t, s).normalize(), &truth.normalize())
                .expect("unit vectors");
            err[t.index()] += e;
        }
        for t in ZoneTerm::ALL {
            correct[t.index()] += usize::from(out.zone_prediction(t) == zone);
        }
    }
    let n = samples.len() as f64;
    Ok(HeadEvaluation {
        n_samples: samples.len(),
        gaze_error_deg: err.map(|e| e / n),
        zone_accuracy: correct.map(|c| c as f64 / n),
        mean_loss: loss / n,
    })
}
