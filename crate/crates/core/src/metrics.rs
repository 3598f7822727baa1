//! Evaluation metrics: angular error, accuracy below a threshold, zone
//! precision/recall and error binned by angle from the frontal direction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::Zone;
use crate::geom::Vec3;

pub const UNIT_TOLERANCE: f64 = 1e-9;
pub const FRONTAL: [f64; 3] = [0.0, 0.0, -1.0];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("empty sample set")]
    EmptySet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown zone {0:?}")]
    UnknownZone(String),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("bin edges must be strictly increasing")]
    InvalidEdges,
}

fn check_unit(v: &Vec3) -> Result<(), MetricsError> {
    let n = v.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(MetricsError::NotUnit(n));
    }
    Ok(())
}

/// Angle between two unit vectors in degrees.
///
/// Evaluated as `atan2(|a×b|, a·b)`, which equals `arccos(a·b)` for unit
/// inputs but keeps full precision for nearly parallel vectors.
pub fn angular_error_deg(a: &Vec3, b: &Vec3) -> Result<f64, MetricsError> {
    check_unit(a)?;
    check_unit(b)?;
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

/// Pairwise summation; the result does not depend on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(pairwise_sum(xs) / xs.len() as f64)
}

/// Fraction of errors strictly below `k` degrees.
pub fn average_precision_at(errors: &[f64], k: f64) -> Result<f64, MetricsError> {
    if !(k > 0.0) {
        return Err(MetricsError::InvalidThreshold(k));
    }
    if errors.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let hits = errors.iter().filter(|&&e| e < k).count();
    Ok(hits as f64 / errors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneClassStats {
    pub zone: Zone,
    /// Ground-truth count.
    pub support: usize,
    /// Prediction count.
    pub predicted: usize,
    pub true_positives: usize,
    /// `None` when the class is absent from both predictions and truth.
    pub precision: Option<f64>,
    /// `None` when the class is absent from the truth.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneMetrics {
    pub per_class: Vec<ZoneClassStats>,
    /// Mean precision over the named zones with a defined value.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    /// `confusion[truth][pred]`, all ten classes.
    pub confusion: Vec<Vec<usize>>,
}

impl ZoneMetrics {
    pub fn class(&self, zone: Zone) -> &ZoneClassStats {
        &self.per_class[zone.index()]
    }
}

fn macro_average(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        0.0
    } else {
        pairwise_sum(&defined) / defined.len() as f64
    }
}

pub fn zone_metrics(pred: &[Zone], truth: &[Zone]) -> Result<ZoneMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut confusion = vec![vec![0usize; Zone::COUNT]; Zone::COUNT];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let per_class: Vec<ZoneClassStats> = Zone::ALL
        .iter()
        .map(|&zone| {
            let i = zone.index();
            let tp = confusion[i][i];
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let precision = match (predicted, support) {
                (0, 0) => None,
                (0, _) => Some(0.0),
                (n, _) => Some(tp as f64 / n as f64),
            };
            let recall = (support > 0).then(|| tp as f64 / support as f64);
            ZoneClassStats {
                zone,
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
            }
        })
        .collect();
    let named = || per_class.iter().filter(|c| c.zone.is_named());
    let correct: usize = (0..Zone::COUNT).map(|i| confusion[i][i]).sum();
    Ok(ZoneMetrics {
        macro_precision: macro_average(named().map(|c| c.precision)),
        macro_recall: macro_average(named().map(|c| c.recall)),
        accuracy: correct as f64 / pred.len() as f64,
        per_class,
        confusion,
    })
}

/// Parses zone names, then calls [`zone_metrics`].
pub fn zone_metrics_from_names(pred: &[&str], truth: &[&str]) -> Result<ZoneMetrics, MetricsError> {
    let parse = |names: &[&str]| -> Result<Vec<Zone>, MetricsError> {
        names
            .iter()
            .map(|s| s.parse::<Zone>().map_err(|_| MetricsError::UnknownZone(s.to_string())))
            .collect()
    };
    zone_metrics(&parse(pred)?, &parse(truth)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBins {
    pub edges: Vec<f64>,
    /// One count per `[edges[i], edges[i+1])` bin, then the overflow bin.
    pub counts: Vec<usize>,
    /// Mean error per bin; `None` for empty bins.
    pub mean_errors: Vec<Option<f64>>,
}

impl RangeBins {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn label(&self, i: usize) -> String {
        if i + 1 < self.edges.len() {
            format!("[{}, {})", self.edges[i], self.edges[i + 1])
        } else {
            "other".to_string()
        }
    }
}

pub fn validate_edges(edges: &[f64]) -> Result<(), MetricsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::InvalidEdges);
    }
    Ok(())
}

/// Bins samples by the angle between `dirs[i]` and `frontal`. Angles outside
/// `[edges[0], edges[last])` go to the trailing overflow bin.
pub fn range_bins(dirs: &[Vec3], errors: &[f64], frontal: &Vec3, edges: &[f64]) -> Result<RangeBins, MetricsError> {
    validate_edges(edges)?;
    if dirs.len() != errors.len() {
        return Err(MetricsError::LengthMismatch(dirs.len(), errors.len()));
    }
    let n_bins = edges.len();
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (d, &e) in dirs.iter().zip(errors) {
        let angle = angular_error_deg(d, frontal)?;
        let bin = edges
            .windows(2)
            .position(|w| angle >= w[0] && angle < w[1])
            .unwrap_or(n_bins - 1);
        members[bin].push(e);
    }
    Ok(RangeBins {
        edges: edges.to_vec(),
        counts: members.iter().map(Vec::len).collect(),
        mean_errors: members.iter().map(|m| mean(m).ok()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub thresholds: Vec<f64>,
    pub bin_edges: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![2.0, 4.0, 6.0, 8.0],
            bin_edges: vec![0.0, 20.0, 40.0, 60.0, 90.0],
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if let Some(&k) = self.thresholds.iter().find(|&&k| !(k > 0.0)) {
            return Err(MetricsError::InvalidThreshold(k));
        }
        validate_edges(&self.bin_edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApEntry {
    pub threshold_deg: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_samples: usize,
    pub mean_error_deg: f64,
    pub ap: Vec<ApEntry>,
    pub zones: Option<ZoneMetrics>,
    /// Binned by ground-truth gaze angle from the frontal direction.
    pub gaze_bins: RangeBins,
    /// Binned by head direction, when head poses are available.
    pub head_bins: Option<RangeBins>,
}

/// Inputs for [`EvalReport::compute`]. Gaze directions are unit vectors in
/// the same frame.
pub struct EvalInput<'a> {
    pub predicted: &'a [Vec3],
    pub truth: &'a [Vec3],
    pub zones: Option<(&'a [Zone], &'a [Zone])>,
    pub head_dirs: Option<&'a [Vec3]>,
}

impl EvalReport {
    pub fn compute(input: &EvalInput<'_>, cfg: &MetricsConfig) -> Result<Self, MetricsError> {
        cfg.validate()?;
        if input.predicted.len() != input.truth.len() {
            return Err(MetricsError::LengthMismatch(input.predicted.len(), input.truth.len()));
        }
        let errors = input
            .predicted
            .iter()
            .zip(input.truth)
            .map(|(p, t)| angular_error_deg(p, t))
            .collect::<Result<Vec<_>, _>>()?;
        let frontal = Vec3::from(FRONTAL);
        let ap = cfg
            .thresholds
            .iter()
            .map(|&k| Ok(ApEntry { threshold_deg: k, value: average_precision_at(&errors, k)? }))
            .collect::<Result<Vec<_>, MetricsError>>()?;
        let zones = input.zones.map(|(p, t)| zone_metrics(p, t)).transpose()?;
        let head_bins = input
            .head_dirs
            .map(|h| range_bins(h, &errors, &frontal, &cfg.bin_edges))
            .transpose()?;
        Ok(Self {
            n_samples: errors.len(),
            mean_error_deg: mean(&errors)?,
            ap,
            zones,
            gaze_bins: range_bins(input.truth, &errors, &frontal, &cfg.bin_edges)?,
            head_bins,
        })
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples            {}", self.n_samples);
        let _ = writeln!(s, "mean error (deg)   {:.3}", self.mean_error_deg);
        for e in &self.ap {
            let _ = writeln!(s, "AP@{:<4}            {:.2}%", e.threshold_deg, 100.0 * e.value);
        }
        if let Some(z) = &self.zones {
            let _ = writeln!(s, "\nzone                    precision   recall  support");
            for c in &z.per_class {
                let _ = writeln!(
                    s,
                    "{:<22} {:>10} {:>8} {:>8}",
                    c.zone.name(),
                    fmt_pct(c.precision),
                    fmt_pct(c.recall),
                    c.support
                );
            }
            let _ = writeln!(
                s,
                "{:<22} {:>10} {:>8}",
                "macro (named zones)",
                fmt_pct(Some(z.macro_precision)),
                fmt_pct(Some(z.macro_recall))
            );
            let _ = writeln!(s, "accuracy               {}", fmt_pct(Some(z.accuracy)));
        }
        for (title, bins) in [("gaze range", Some(&self.gaze_bins)), ("head range", self.head_bins.as_ref())] {
            let Some(bins) = bins else { continue };
            let _ = writeln!(s, "\n{title:<22} {:>8} {:>10}", "count", "mean err");
            for i in 0..bins.bin_count() {
                let mean = bins.mean_errors[i].map_or("-".to_string(), |m| format!("{m:.3}"));
                let _ = writeln!(s, "{:<22} {:>8} {:>10}", bins.label(i), bins.counts[i], mean);
            }
        }
        s
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

/// Bar chart of mean error per range bin. Output depends only on `bins`.
pub fn range_bins_svg(bins: &RangeBins, title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 300.0;
    const LEFT: f64 = 50.0;
    const BOTTOM: f64 = 40.0;
    const TOP: f64 = 30.0;
    let n = bins.bin_count();
    let max = bins
        .mean_errors
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-9);
    let plot_w = W - LEFT - 10.0;
    let plot_h = H - BOTTOM - TOP;
    let slot = plot_w / n as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let base = H - BOTTOM;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
        W - 10.0
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{:.2}</text>"#,
        LEFT - 4.0,
        TOP + 4.0,
        max
    );
    for i in 0..n {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        if let Some(m) = bins.mean_errors[i] {
            let h = plot_h * m / max;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{h:.1}" fill="#4a78b5"/>"##,
                base - h
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{m:.2}</text>"#,
                x + bw / 2.0,
                base - h - 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{} (n={})</text>"#,
            x + bw / 2.0,
            base + 14.0,
            xml_escape(&bins.label(i)),
            bins.counts[i]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
