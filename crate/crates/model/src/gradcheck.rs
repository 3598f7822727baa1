//! Central finite-difference verification of the analytic gradient and of
//! the tri-plane stop-gradient.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::loss::{loss_gradients, loss_total};
use crate::model::{groups, GazeModel, Sample};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub params: usize,
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// entries whose true gradient is ~0 are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { params: 200, step: 1e-5, floor: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub index: usize,
    pub block: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Groups that influence the zone loss only through the tri-plane hit.
pub const STOPPED_GROUPS: [&str; 4] = [
    groups::FUSED_GAZE_HEAD,
    groups::FUSION,
    groups::POSE_PROJECTION,
    groups::NORMALIZED_STREAM,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopGradientReport {
    /// Parameters in [`STOPPED_GROUPS`].
    pub checked: usize,
    /// Of those, how many got a nonzero analytic zone-loss gradient.
    pub nonzero: usize,
    /// Largest |finite difference| of the zone loss (hit recomputed) over
    /// the sampled fused-head parameters: the value path the gradient skips.
    pub max_blocked_fd: f64,
    /// Largest |analytic gradient| of the full loss on the fused gaze head.
    pub max_fused_head_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub stop_gradient: StopGradientReport,
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn total_loss(model: &GazeModel, p: &[f64], samples: &[Sample], w: &LossWeights, frozen: bool) -> Result<f64, ModelError> {
    let mut l = 0.0;
    for s in samples {
        let out = if frozen {
            let hit = model.forward(p, s)?.outputs.hit;
            model.forward_with_hit(p, s, &hit)?.outputs
        } else {
            model.forward(p, s)?.outputs
        };
        l += loss_total(&out, &s.labels, w)?.total;
    }
    Ok(l)
}

/// Summed analytic gradient of the loss under `w`.
pub fn analytic_gradient(model: &GazeModel, p: &[f64], samples: &[Sample], w: &LossWeights) -> Result<Vec<f64>, ModelError> {
    let mut g = vec![0.0; p.len()];
    for s in samples {
        let f = model.forward(p, s)?;
        let (dg, dl) = loss_gradients(&f.outputs, &s.labels, w)?;
        model.backward(p, &f.cache, &dg, &dl, &mut g);
    }
    Ok(g)
}

/// Hits are evaluated once at `p` and held fixed while perturbing, which is
/// the function whose gradient backward computes.
fn frozen_loss(model: &GazeModel, p: &[f64], samples: &[Sample], hits: &[cabingaze_core::triplane::TriPlaneHit]) -> Result<f64, ModelError> {
    let mut l = 0.0;
    for (s, h) in samples.iter().zip(hits) {
        let out = model.forward_with_hit(p, s, h)?.outputs;
        l += loss_total(&out, &s.labels, &model.cfg.loss)?.total;
    }
    Ok(l)
}

pub fn gradcheck(model: &GazeModel, params: &[f64], samples: &[Sample], cfg: &GradCheckConfig) -> Result<GradCheckReport, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(cfg.step > 0.0 && cfg.floor > 0.0) || cfg.params == 0 {
        return Err(ModelError::Config("gradcheck needs positive step, floor and parameter count".into()));
    }
    let hits = samples
        .iter()
        .map(|s| model.forward(params, s).map(|f| f.outputs.hit))
        .collect::<Result<Vec<_>, _>>()?;
    let g = analytic_gradient(model, params, samples, &model.cfg.loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = sample_indices(&mut rng, params.len(), cfg.params.min(params.len())).into_vec();
    let mut p = params.to_vec();
    let mut entries = Vec::with_capacity(picks.len());
    for i in picks {
        let x = p[i];
        p[i] = x + cfg.step;
        let up = frozen_loss(model, &p, samples, &hits)?;
        p[i] = x - cfg.step;
        let down = frozen_loss(model, &p, samples, &hits)?;
        p[i] = x;
        let numeric = (up - down) / (2.0 * cfg.step);
        entries.push(GradEntry {
            index: i,
            block: model.layout.name_of(i).unwrap_or("?").to_string(),
            analytic: g[i],
            numeric,
            rel_error: rel_error(g[i], numeric, cfg.floor),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let stop_gradient = stop_gradient_check(model, params, samples, &g, cfg)?;
    Ok(GradCheckReport { entries, max_rel_error, stop_gradient })
}

fn stop_gradient_check(
    model: &GazeModel,
    params: &[f64],
    samples: &[Sample],
    full_grad: &[f64],
    cfg: &GradCheckConfig,
) -> Result<StopGradientReport, ModelError> {
    let zone_only = LossWeights { gaze_mask: [false; 11], ..model.cfg.loss };
    let gz = analytic_gradient(model, params, samples, &zone_only)?;
    let stopped: Vec<usize> = STOPPED_GROUPS
        .iter()
        .flat_map(|prefix| model.layout.blocks_with_prefix(prefix))
        .flat_map(|b| b.offset..b.offset + b.len)
        .collect();
    let nonzero = stopped.iter().filter(|&&i| gz[i] != 0.0).count();

    let head: Vec<usize> = model
        .layout
        .blocks_with_prefix(groups::FUSED_GAZE_HEAD)
        .flat_map(|b| b.offset..b.offset + b.len)
        .collect();
    let max_fused_head_grad = head.iter().map(|&i| full_grad[i].abs()).fold(0.0, f64::max);
    let mut p = params.to_vec();
    let mut max_blocked_fd: f64 = 0.0;
    // A larger step makes hit movement visible through the sinusoidal encoding.
    let h = cfg.step * 100.0;
    for &i in head.iter().take(32) {
        let x = p[i];
        p[i] = x + h;
        let up = total_loss(model, &p, samples, &zone_only, false)?;
        p[i] = x - h;
        let down = total_loss(model, &p, samples, &zone_only, false)?;
        p[i] = x;
        max_blocked_fd = max_blocked_fd.max(((up - down) / (2.0 * h)).abs());
    }
    Ok(StopGradientReport { checked: stopped.len(), nonzero, max_blocked_fd, max_fused_head_grad })
}
