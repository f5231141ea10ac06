//! 2D whole-body pose landmarks and the pose-JSON file format.
//!
//! Coordinates are always held normalized to `[0, 1]` along width and height.
//! A landmark whose confidence falls below the caller's validity threshold is
//! treated as absent by every distance, fit and bounding-box computation.

use std::fmt;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence below which a landmark is ignored unless the caller says otherwise.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.3;

/// Decimal places written by [`serialize_pose_sequence`].
pub const CANONICAL_PRECISION: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Landmark {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    #[inline]
    pub fn is_valid(&self, threshold: f64) -> bool {
        self.confidence >= threshold
    }

    pub fn point(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// The four landmark groups of a whole-body pose, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkGroup {
    Body,
    Face,
    LeftHand,
    RightHand,
}

impl LandmarkGroup {
    pub const ALL: [LandmarkGroup; 4] = [
        LandmarkGroup::Body,
        LandmarkGroup::Face,
        LandmarkGroup::LeftHand,
        LandmarkGroup::RightHand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkGroup::Body => "body",
            LandmarkGroup::Face => "face",
            LandmarkGroup::LeftHand => "left_hand",
            LandmarkGroup::RightHand => "right_hand",
        }
    }
}

impl fmt::Display for LandmarkGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(LandmarkGroup::Body),
            "face" => Ok(LandmarkGroup::Face),
            "left_hand" => Ok(LandmarkGroup::LeftHand),
            "right_hand" => Ok(LandmarkGroup::RightHand),
            other => Err(Error::InvalidInput(format!(
                "unknown landmark group '{other}' (expected body, face, left_hand or right_hand)"
            ))),
        }
    }
}

/// Landmark counts per group. Groups are stored contiguously as
/// body | face | left hand | right hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoseLayout {
    pub body: usize,
    pub face: usize,
    pub hand: usize,
}

impl Default for PoseLayout {
    /// 133-point whole-body layout: 23 body and feet, 68 face, 21 per hand.
    fn default() -> Self {
        Self::WHOLE_BODY
    }
}

impl PoseLayout {
    pub const WHOLE_BODY: PoseLayout = PoseLayout {
        body: 23,
        face: 68,
        hand: 21,
    };

    pub fn total(&self) -> usize {
        self.body + self.face + 2 * self.hand
    }

    pub fn range(&self, group: LandmarkGroup) -> Range<usize> {
        let face_start = self.body;
        let left_start = face_start + self.face;
        let right_start = left_start + self.hand;
        match group {
            LandmarkGroup::Body => 0..self.body,
            LandmarkGroup::Face => face_start..left_start,
            LandmarkGroup::LeftHand => left_start..right_start,
            LandmarkGroup::RightHand => right_start..right_start + self.hand,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    layout: PoseLayout,
    landmarks: Vec<Landmark>,
    pub source_width: u32,
    pub source_height: u32,
}

impl Pose {
    pub fn new(layout: PoseLayout, landmarks: Vec<Landmark>) -> Result<Self> {
        if landmarks.len() != layout.total() {
            return Err(Error::Layout(format!(
                "pose has {} landmarks but the layout expects {}",
                landmarks.len(),
                layout.total()
            )));
        }
        for (i, lm) in landmarks.iter().enumerate() {
            if !lm.x.is_finite() || !lm.y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "landmark {i} has non-finite coordinates"
                )));
            }
            if !(0.0..=1.0).contains(&lm.confidence) {
                return Err(Error::InvalidInput(format!(
                    "landmark {i} confidence {} outside [0, 1]",
                    lm.confidence
                )));
            }
        }
        Ok(Self {
            layout,
            landmarks,
            source_width: 0,
            source_height: 0,
        })
    }

    pub fn with_source_size(mut self, width: u32, height: u32) -> Self {
        self.source_width = width;
        self.source_height = height;
        self
    }

    pub fn layout(&self) -> PoseLayout {
        self.layout
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn group(&self, group: LandmarkGroup) -> &[Landmark] {
        &self.landmarks[self.layout.range(group)]
    }

    /// Returns a copy with every landmark moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        let mut out = self.clone();
        for lm in &mut out.landmarks {
            lm.x += dx;
            lm.y += dy;
        }
        out
    }

    /// Returns a copy with `f` applied to the landmarks of one group.
    pub fn map_group(&self, group: LandmarkGroup, mut f: impl FnMut(&mut Landmark)) -> Pose {
        let mut out = self.clone();
        let range = self.layout.range(group);
        out.landmarks[range].iter_mut().for_each(&mut f);
        out
    }

    /// `true` when some landmark lies outside the unit square, which only
    /// happens for poses edited after extraction.
    pub fn has_out_of_frame_landmarks(&self) -> bool {
        self.landmarks
            .iter()
            .any(|lm| !(0.0..=1.0).contains(&lm.x) || !(0.0..=1.0).contains(&lm.y))
    }
}

/// Slice of one landmark group.
pub fn group_landmarks<'a>(pose: &'a Pose, group: &str) -> Result<&'a [Landmark]> {
    Ok(pose.group(group.parse()?))
}

/// Non-empty sequence of poses sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    poses: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        let first = poses
            .first()
            .ok_or_else(|| Error::InvalidInput("pose sequence is empty".into()))?;
        let layout = first.layout;
        if let Some((i, p)) = poses.iter().enumerate().find(|(_, p)| p.layout != layout) {
            return Err(Error::Layout(format!(
                "pose {} uses layout {:?}, expected {:?}",
                i + 1,
                p.layout,
                layout
            )));
        }
        Ok(Self { poses })
    }

    pub fn layout(&self) -> PoseLayout {
        self.poses[0].layout
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// 1-based access, matching the indices reported to users.
    pub fn get(&self, index: usize) -> Option<&Pose> {
        index.checked_sub(1).and_then(|i| self.poses.get(i))
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }
}

impl std::ops::Index<usize> for PoseSequence {
    type Output = Pose;

    fn index(&self, i: usize) -> &Pose {
        &self.poses[i]
    }
}

pub(crate) fn ensure_same_layout(a: PoseLayout, b: PoseLayout) -> Result<()> {
    if a != b {
        return Err(Error::Layout(format!("layouts differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Mean squared landmark displacement between two poses.
///
/// Only landmarks valid in both poses contribute; the sum of `dx² + dy²` is
/// divided by their count. Returns `+inf` when no landmark is shared.
pub fn pose_distance(q: &Pose, p: &Pose, threshold: f64) -> Result<f64> {
    pose_distance_in(q, p, threshold, &LandmarkGroup::ALL)
}

/// [`pose_distance`] restricted to a subset of landmark groups.
pub fn pose_distance_in(
    q: &Pose,
    p: &Pose,
    threshold: f64,
    groups: &[LandmarkGroup],
) -> Result<f64> {
    ensure_same_layout(q.layout, p.layout)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &group in LandmarkGroup::ALL.iter().filter(|g| groups.contains(g)) {
        for (a, b) in q.group(group).iter().zip(p.group(group)) {
            if a.is_valid(threshold) && b.is_valid(threshold) {
                let dx = a.x - b.x;
                let dy = a.y - b.y;
                sum += dx * dx + dy * dy;
                count += 1;
            }
        }
    }
    Ok(if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Normalized,
    Pixel,
}

#[derive(Deserialize)]
struct RawPoseFile {
    #[serde(default)]
    layout: PoseLayout,
    #[serde(default = "default_units")]
    units: Units,
    #[serde(default)]
    width: u32,
    #[serde(default)]
    height: u32,
    poses: Vec<RawPose>,
}

#[derive(Deserialize)]
struct RawPose {
    landmarks: Vec<[f64; 3]>,
}

fn default_units() -> Units {
    Units::Normalized
}

/// Parses pose-JSON text. Pixel coordinates are divided by the declared
/// `width` / `height`.
pub fn parse_pose_str(text: &str) -> Result<PoseSequence> {
    let raw: RawPoseFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if raw.units == Units::Pixel && (raw.width == 0 || raw.height == 0) {
        return Err(Error::Format(
            "pixel units require positive width and height".into(),
        ));
    }
    let (sx, sy) = match raw.units {
        Units::Normalized => (1.0, 1.0),
        Units::Pixel => (raw.width as f64, raw.height as f64),
    };
    let poses = raw
        .poses
        .into_iter()
        .enumerate()
        .map(|(i, rp)| {
            let landmarks = rp
                .landmarks
                .into_iter()
                .map(|[x, y, c]| Landmark::new(x / sx, y / sy, c))
                .collect();
            Pose::new(raw.layout, landmarks)
                .map(|p| p.with_source_size(raw.width, raw.height))
                .map_err(|e| match e {
                    Error::Layout(msg) => Error::Layout(format!("pose {}: {msg}", i + 1)),
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(poses)
}

pub fn parse_pose_file(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_str(&text)
}

fn push_fixed(out: &mut String, v: f64) {
    let s = format!("{v:.prec$}", prec = CANONICAL_PRECISION);
    // "-0.000000" would break byte-for-byte comparisons with "0.000000".
    if s.trim_start_matches('-')
        .bytes()
        .all(|b| b == b'0' || b == b'.')
    {
        out.push_str(s.trim_start_matches('-'));
    } else {
        out.push_str(&s);
    }
}

/// Canonical pose-JSON: sorted keys, normalized units, six decimals.
pub fn serialize_pose_sequence(seq: &PoseSequence) -> Vec<u8> {
    let layout = seq.layout();
    let first = &seq.poses[0];
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"height\":{},\"layout\":{{\"body\":{},\"face\":{},\"hand\":{}}},\"poses\":[",
        first.source_height, layout.body, layout.face, layout.hand
    );
    for (pi, pose) in seq.poses.iter().enumerate() {
        if pi > 0 {
            out.push(',');
        }
        out.push_str("{\"landmarks\":[");
        for (li, lm) in pose.landmarks.iter().enumerate() {
            if li > 0 {
                out.push(',');
            }
            out.push('[');
            push_fixed(&mut out, lm.x);
            out.push(',');
            push_fixed(&mut out, lm.y);
            out.push(',');
            push_fixed(&mut out, lm.confidence);
            out.push(']');
        }
        out.push_str("]}");
    }
    let _ = write!(
        out,
        "],\"units\":\"normalized\",\"width\":{}}}",
        first.source_width
    );
    out.into_bytes()
}

pub fn write_pose_file(path: impl AsRef<Path>, seq: &PoseSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_pose_sequence(seq)).map_err(|e| Error::io(path, e))
}
