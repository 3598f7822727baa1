//! Training objective: L1 on (yaw, pitch) for the eleven gaze predictions,
//! cross-entropy for the three zone heads, `total = w_g·L1 + w_z·L2`.

use cabingaze_core::annotate::Zone;

use crate::config::LossWeights;
use crate::model::{GazeTerm, Outputs, StreamKind, GAZE_TERMS, ZONE_TERMS};
use crate::ModelError;

/// Logits are clamped to `±LOGIT_CLAMP` before the log-softmax.
pub const LOGIT_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub gaze_terms: [f64; GAZE_TERMS],
    pub zone_terms: [f64; ZONE_TERMS],
    /// Sum of the enabled gaze terms.
    pub l1: f64,
    /// Sum of the enabled zone terms.
    pub l2: f64,
    pub total: f64,
}

/// Mean absolute error over (yaw, pitch).
pub fn gaze_l1(pred: [f64; 2], target: [f64; 2]) -> f64 {
    0.5 * ((pred[0] - target[0]).abs() + (pred[1] - target[1]).abs())
}

fn clamp_logits(z: &[f64; Zone::COUNT]) -> [f64; Zone::COUNT] {
    z.map(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64; Zone::COUNT]) -> [f64; Zone::COUNT] {
    let zc = clamp_logits(z);
    let lse = log_sum_exp(&zc);
    zc.map(|v| (v - lse).exp())
}

/// `−log softmax(z)[class]`, evaluated in log space on clamped logits.
pub fn cross_entropy(z: &[f64; Zone::COUNT], class: Zone) -> f64 {
    let zc = clamp_logits(z);
    log_sum_exp(&zc) - zc[class.index()]
}

fn target_for(t: GazeTerm, gaze_o: [f64; 2], gaze_n: [f64; 2]) -> [f64; 2] {
    match t.space() {
        StreamKind::Original => gaze_o,
        StreamKind::Normalized => gaze_n,
    }
}

fn labels_of(labels: &crate::model::Labels) -> Result<([f64; 2], [f64; 2], Zone), ModelError> {
    Ok((
        labels.gaze_o.ok_or(ModelError::LabelMissing("gaze_o"))?,
        labels.gaze_n.ok_or(ModelError::LabelMissing("gaze_n"))?,
        labels.zone.ok_or(ModelError::LabelMissing("zone"))?,
    ))
}

pub fn loss_total(out: &Outputs, labels: &crate::model::Labels, w: &LossWeights) -> Result<LossBreakdown, ModelError> {
    let (go, gn, zone) = labels_of(labels)?;
    let mut gaze_terms = [0.0; GAZE_TERMS];
    let mut l1 = 0.0;
    for t in GazeTerm::ALL {
        let v = gaze_l1(out.gaze[t.index()], target_for(t, go, gn));
        gaze_terms[t.index()] = v;
        if w.gaze_mask[t.index()] {
            l1 += v;
        }
    }
    let mut zone_terms = [0.0; ZONE_TERMS];
    let mut l2 = 0.0;
    for (i, z) in out.zone_logits.iter().enumerate() {
        let v = cross_entropy(z, zone);
        zone_terms[i] = v;
        if w.zone_mask[i] {
            l2 += v;
        }
    }
    Ok(LossBreakdown {
        gaze_terms,
        zone_terms,
        l1,
        l2,
        total: w.gaze * l1 + w.zone * l2,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∂total/∂gaze` and `∂total/∂logits`.
pub fn loss_gradients(
    out: &Outputs,
    labels: &crate::model::Labels,
    w: &LossWeights,
) -> Result<([[f64; 2]; GAZE_TERMS], [[f64; Zone::COUNT]; ZONE_TERMS]), ModelError> {
    let (go, gn, zone) = labels_of(labels)?;
    let mut d_gaze = [[0.0; 2]; GAZE_TERMS];
    for t in GazeTerm::ALL {
        if !w.gaze_mask[t.index()] {
            continue;
        }
        let target = target_for(t, go, gn);
        let pred = out.gaze[t.index()];
        for k in 0..2 {
            d_gaze[t.index()][k] = w.gaze * 0.5 * sign(pred[k] - target[k]);
        }
    }
    let mut d_logits = [[0.0; Zone::COUNT]; ZONE_TERMS];
    for (i, z) in out.zone_logits.iter().enumerate() {
        if !w.zone_mask[i] {
            continue;
        }
        let p = softmax(z);
        for c in 0..Zone::COUNT {
            let onehot = if c == zone.index() { 1.0 } else { 0.0 };
            let inside = z[c].abs() < LOGIT_CLAMP;
            d_logits[i][c] = if inside { w.zone * (p[c] - onehot) } else { 0.0 };
        }
    }
    Ok((d_gaze, d_logits))
}
