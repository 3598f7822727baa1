//! Gaze labels and dataset records.
//!
//! Gaze is the unit vector from the face center `o` to the fixated target
//! `t`. Angles use yaw = atan2(−x, −z) and pitch = asin(−y), so looking
//! straight back into the camera, `(0, 0, −1)`, is yaw 0°, pitch 0°.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Rotation, Vec3};

/// Minimum face-to-target distance, meters.
pub const MIN_TARGET_DISTANCE: f64 = 1e-6;
/// Tolerance on unit-norm inputs.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("face center and target coincide")]
    CoincidentPoints,
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("unknown gaze zone {0:?}")]
    UnknownZone(String),
    #[error("inconsistent record: {0}")]
    InconsistentRecord(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Nine cabin gaze zones plus a catch-all `None` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    LeftSideMirror,
    RearViewMirror,
    RightSideMirror,
    CentralControlScreen,
    SteeringWheel,
    Handbrake,
    Dashboard,
    LeftSideWindshield,
    RightSideWindshield,
    /// Fixations outside every named zone.
    None,
}

impl Zone {
    pub const COUNT: usize = 10;

    /// Class order used for logits and confusion matrices.
    pub const ALL: [Zone; Self::COUNT] = [
        Zone::LeftSideMirror,
        Zone::RearViewMirror,
        Zone::RightSideMirror,
        Zone::CentralControlScreen,
        Zone::SteeringWheel,
        Zone::Handbrake,
        Zone::Dashboard,
        Zone::LeftSideWindshield,
        Zone::RightSideWindshield,
        Zone::None,
    ];

    pub const NAMED: [Zone; 9] = [
        Zone::LeftSideMirror,
        Zone::RearViewMirror,
        Zone::RightSideMirror,
        Zone::CentralControlScreen,
        Zone::SteeringWheel,
        Zone::Handbrake,
        Zone::Dashboard,
        Zone::LeftSideWindshield,
        Zone::RightSideWindshield,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|z| *z == self).expect("zone in ALL")
    }

    pub fn from_index(i: usize) -> Option<Zone> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::LeftSideMirror => "left-side mirror",
            Zone::RearViewMirror => "rear-view mirror",
            Zone::RightSideMirror => "right-side mirror",
            Zone::CentralControlScreen => "central-control screen",
            Zone::SteeringWheel => "steering wheel",
            Zone::Handbrake => "handbrake",
            Zone::Dashboard => "dashboard",
            Zone::LeftSideWindshield => "left-side windshield",
            Zone::RightSideWindshield => "right-side windshield",
            Zone::None => "none",
        }
    }

    pub fn is_named(self) -> bool {
        self != Zone::None
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Zone {
    type Err = AnnotateError;

    /// Case-insensitive; `_` is accepted in place of a space.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', " ");
        Zone::ALL
            .into_iter()
            .find(|z| z.name() == norm)
            .ok_or_else(|| AnnotateError::UnknownZone(s.to_string()))
    }
}

impl Serialize for Zone {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Zone {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Head-movement protocol of a recording segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Posture {
    /// Head pose held still; only the eyes move.
    FixedHead,
    /// Head position held still; the head may rotate.
    FixedPosition,
    Free,
}

impl Posture {
    pub const ALL: [Posture; 3] = [Posture::FixedHead, Posture::FixedPosition, Posture::Free];
}

/// Returns `(yaw, pitch)` in degrees for a unit vector.
pub fn yawpitch_from_vec(v: &Vec3) -> Result<(f64, f64), AnnotateError> {
    let n = v.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(AnnotateError::NotUnit(n));
    }
    let mut yaw = (-v.x).atan2(-v.z).to_degrees();
    if yaw <= -180.0 {
        yaw += 360.0;
    }
    // Same as asin(-y) on the unit sphere, better conditioned near the poles.
    let pitch = (-v.y).atan2(v.x.hypot(v.z)).to_degrees();
    Ok((yaw, pitch))
}

pub fn vec_from_yawpitch(yaw_deg: f64, pitch_deg: f64) -> Vec3 {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    Vec3::new(-cp * sy, -sp, -cp * cy)
}

/// Unit gaze direction plus its yaw/pitch in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeLabel {
    pub direction: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeLabel {
    pub fn from_direction(v: &Vec3) -> Result<Self, AnnotateError> {
        let (yaw, pitch) = yawpitch_from_vec(v)?;
        Ok(Self {
            direction: (*v).into(),
            yaw,
            pitch,
        })
    }

    /// Normalizes `v` first.
    pub fn from_any_direction(v: &Vec3) -> Result<Self, AnnotateError> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(AnnotateError::NotUnit(n));
        }
        Self::from_direction(&(v / n))
    }

    pub fn from_yawpitch(yaw_deg: f64, pitch_deg: f64) -> Self {
        let d = vec_from_yawpitch(yaw_deg, pitch_deg);
        Self::from_direction(&d).expect("yaw/pitch vector is unit")
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::from(self.direction)
    }

    pub fn rotated(&self, r: &Rotation) -> Self {
        Self::from_any_direction(&r.apply(&self.vector())).expect("rotation preserves norm")
    }
}

/// `g = (t − o) / |t − o|`.
pub fn gaze_from_target(o: &Vec3, t: &Vec3) -> Result<GazeLabel, AnnotateError> {
    let d = t - o;
    let n = d.norm();
    if !(n > MIN_TARGET_DISTANCE) {
        return Err(AnnotateError::CoincidentPoints);
    }
    GazeLabel::from_direction(&(d / n))
}

/// Normalized-view data attached to a record by the normalization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationInfo {
    /// Rows are the virtual camera axes in the original camera frame.
    pub rotation: Rotation,
    /// `d_norm / |o|`, the z-entry of the scale matrix.
    pub scale: f64,
    /// Gaze in the normalized space.
    pub gaze: GazeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// One annotated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub subject_id: u32,
    pub camera_id: String,
    /// Gaze origin (face center), meters, camera frame.
    pub face_center: [f64; 3],
    /// Fixated target, meters, camera frame.
    pub target: [f64; 3],
    pub target_id: u32,
    pub gaze: GazeLabel,
    pub zone: Zone,
    pub landmarks: Vec<[f64; 3]>,
    pub posture: Posture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIds {
    pub subject_id: u32,
    pub camera_id: String,
    pub target_id: u32,
}

pub fn build_record(
    o: &Vec3,
    t: &Vec3,
    zone: &str,
    landmarks: Vec<Vec3>,
    posture: Posture,
    ids: RecordIds,
) -> Result<SampleRecord, AnnotateError> {
    let zone: Zone = zone.parse()?;
    let gaze = gaze_from_target(o, t)?;
    Ok(SampleRecord {
        subject_id: ids.subject_id,
        camera_id: ids.camera_id,
        face_center: (*o).into(),
        target: (*t).into(),
        target_id: ids.target_id,
        gaze,
        zone,
        landmarks: landmarks.into_iter().map(Into::into).collect(),
        posture,
        image: None,
        normalization: None,
    })
}

impl SampleRecord {
    pub fn face_center(&self) -> Vec3 {
        Vec3::from(self.face_center)
    }

    pub fn target(&self) -> Vec3 {
        Vec3::from(self.target)
    }

    pub fn landmarks(&self) -> Vec<Vec3> {
        self.landmarks.iter().copied().map(Vec3::from).collect()
    }

    /// Checks the annotation identity and label consistency.
    pub fn validate(&self) -> Result<(), AnnotateError> {
        let expect = gaze_from_target(&self.face_center(), &self.target())?;
        let err = (expect.vector() - self.gaze.vector()).amax();
        if !(err <= 1e-9) {
            return Err(AnnotateError::InconsistentRecord(format!(
                "gaze differs from (t - o)/|t - o| by {err:.3e}"
            )));
        }
        let back = vec_from_yawpitch(self.gaze.yaw, self.gaze.pitch);
        if !((back - self.gaze.vector()).amax() <= 1e-9) {
            return Err(AnnotateError::InconsistentRecord("yaw/pitch disagree with direction".into()));
        }
        if let Some(n) = &self.normalization {
            let g_n = n.rotation.apply(&self.gaze.vector());
            if !((g_n - n.gaze.vector()).amax() <= 1e-9) {
                return Err(AnnotateError::InconsistentRecord("normalized gaze is not R g".into()));
            }
        }
        Ok(())
    }
}

/// Reads and validates one record per non-blank line.
pub fn read_records(reader: impl BufRead) -> Result<Vec<SampleRecord>, AnnotateError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|source| AnnotateError::Parse { line: i + 1, source })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<'a>(
    mut w: impl Write,
    records: impl IntoIterator<Item = &'a SampleRecord>,
) -> Result<(), AnnotateError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
