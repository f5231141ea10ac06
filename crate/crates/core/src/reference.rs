//! Reference-frame selection and reference-pose insertion.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::Video;
use crate::pose::{ensure_same_layout, pose_distance, Pose, PoseSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceChoice {
    /// 1-based position in the training sequence.
    pub r: usize,
    pub total_distance: f64,
}

/// Summed distance from each training pose to all inference poses.
///
/// Entry `i` is `Σ_j d(q_i, p_j)`, accumulated in ascending `j`.
pub fn selection_objective(
    train: &PoseSequence,
    infer: &PoseSequence,
    threshold: f64,
) -> Result<Vec<f64>> {
    ensure_same_layout(train.layout(), infer.layout())?;
    train
        .poses()
        .iter()
        .map(|q| {
            infer
                .poses()
                .iter()
                .try_fold(0.0, |acc, p| Ok(acc + pose_distance(q, p, threshold)?))
        })
        .collect()
}

/// Training frame whose pose is closest, in total, to the inference poses.
/// Ties go to the smallest index.
pub fn select_reference_frame(
    train: &PoseSequence,
    infer: &PoseSequence,
    threshold: f64,
) -> Result<ReferenceChoice> {
    let totals = selection_objective(train, infer, threshold)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, &t) in totals.iter().enumerate() {
        if t.is_finite() && best.is_none_or(|(_, b)| t < b) {
            best = Some((i, t));
        }
    }
    best.map(|(i, t)| ReferenceChoice {
        r: i + 1,
        total_distance: t,
    })
    .ok_or_else(|| {
        Error::Selection(
            "no training pose shares a valid landmark with every inference pose".into(),
        )
    })
}

/// Inference poses with the reference pose inserted at key position `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertedSequence {
    pub poses: PoseSequence,
    /// 1-based position of the inserted pose.
    pub key_index: usize,
    pub original_length: usize,
}

impl InsertedSequence {
    pub fn reference(&self) -> &Pose {
        &self.poses[self.key_index - 1]
    }

    /// Removes the inserted pose, restoring the original inference order.
    pub fn remove_inserted(&self) -> PoseSequence {
        let mut poses = self.poses.poses().to_vec();
        poses.remove(self.key_index - 1);
        PoseSequence::new(poses).expect("original sequence was non-empty")
    }
}

pub fn insert_reference_pose(
    infer: &PoseSequence,
    reference: &Pose,
    k: usize,
) -> Result<InsertedSequence> {
    ensure_same_layout(infer.layout(), reference.layout())?;
    let m = infer.len();
    if k == 0 || k > m + 1 {
        return Err(Error::OutOfRange(format!(
            "key index {k} not in 1..={}",
            m + 1
        )));
    }
    let mut poses = infer.poses().to_vec();
    poses.insert(k - 1, reference.clone());
    Ok(InsertedSequence {
        poses: PoseSequence::new(poses)?,
        key_index: k,
        original_length: m,
    })
}

/// Removes the frame at 1-based position `k`.
pub fn drop_inserted_frame(video: &Video, k: usize) -> Result<Video> {
    if video.frames < 2 {
        return Err(Error::Shape(
            "need at least two frames to drop the inserted one".into(),
        ));
    }
    if k == 0 || k > video.frames {
        return Err(Error::OutOfRange(format!(
            "key index {k} not in 1..={}",
            video.frames
        )));
    }
    let keep: Vec<usize> = (0..video.frames).filter(|&i| i != k - 1).collect();
    Ok(video.select_frames(&keep))
}

/// Inverse of [`drop_inserted_frame`]: puts `frame` back at position `k`.
pub fn insert_frame(video: &Video, frame: &[f64], k: usize) -> Result<Video> {
    if frame.len() != video.frame_len() {
        return Err(Error::Shape(format!(
            "frame has {} values, video frames have {}",
            frame.len(),
            video.frame_len()
        )));
    }
    if k == 0 || k > video.frames + 1 {
        return Err(Error::OutOfRange(format!(
            "key index {k} not in 1..={}",
            video.frames + 1
        )));
    }
    let n = video.frame_len();
    let mut data = Vec::with_capacity(video.data.len() + n);
    data.extend_from_slice(&video.data[..(k - 1) * n]);
    data.extend_from_slice(frame);
    data.extend_from_slice(&video.data[(k - 1) * n..]);
    Ok(Video {
        frames: video.frames + 1,
        data,
        ..*video
    })
}
