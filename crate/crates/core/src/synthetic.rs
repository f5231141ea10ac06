//! Seeded synthetic subject videos with matching whole-body poses.
//!
//! A figure made of soft blobs (torso, head, two hands) sways across the
//! frame while its hands wave. The poses are generated from the same
//! parameters as the pixels, so pose-driven edits and selection have a
//! ground truth to be checked against.

use rand::Rng;

use crate::error::Result;
use crate::latent::Video;
use crate::pose::{Landmark, LandmarkGroup, Pose, PoseLayout, PoseSequence};
use crate::rng::{stream, streams};

/// Frames and their poses.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub frames: Video,
    pub poses: PoseSequence,
}

/// Figure state for one frame, all in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureState {
    pub center: [f64; 2],
    pub head: [f64; 2],
    pub left_hand: [f64; 2],
    pub right_hand: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    sway: f64,
    phase: f64,
    wave: f64,
    bob: f64,
}

impl Motion {
    fn draw(rng: &mut impl Rng) -> Self {
        Self {
            sway: rng.random_range(0.08..0.16),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            wave: rng.random_range(0.06..0.12),
            bob: rng.random_range(0.01..0.04),
        }
    }

    fn state(&self, u: f64) -> FigureState {
        let a = std::f64::consts::TAU * u + self.phase;
        let cx = 0.5 + self.sway * a.sin();
        let cy = 0.55 + self.bob * (2.0 * a).cos();
        FigureState {
            center: [cx, cy],
            head: [cx, cy - 0.25],
            left_hand: [cx - 0.22, cy - 0.05 - self.wave * a.cos()],
            right_hand: [cx + 0.22, cy - 0.05 + self.wave * (a + 1.0).sin()],
        }
    }
}

fn ring(center: [f64; 2], radius: f64, n: usize, conf: f64) -> Vec<Landmark> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            // Slight ellipse keeps the points well spread in both axes.
            Landmark::new(
                center[0] + radius * a.cos(),
                center[1] + 0.8 * radius * a.sin(),
                conf,
            )
        })
        .collect()
}

/// Whole-body pose for a figure state.
pub fn pose_for_state(s: &FigureState, layout: PoseLayout) -> Result<Pose> {
    let mut lms = Vec::with_capacity(layout.total());
    for i in 0..layout.body {
        let u = if layout.body > 1 {
            i as f64 / (layout.body - 1) as f64
        } else {
            0.5
        };
        // Body keypoints run from the neck down the torso, alternating sides.
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        lms.push(Landmark::new(
            s.center[0] + side * 0.06 * (1.0 - u),
            s.center[1] - 0.15 + 0.35 * u,
            1.0,
        ));
    }
    lms.extend(ring(s.head, 0.07, layout.face, 1.0));
    lms.extend(ring(s.left_hand, 0.045, layout.hand, 1.0));
    lms.extend(ring(s.right_hand, 0.045, layout.hand, 1.0));
    Pose::new(layout, lms)
}

fn blob(x: f64, y: f64, c: [f64; 2], sigma: f64) -> f64 {
    let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Two-channel rendering: channel 0 carries the torso over a soft
/// background ramp, channel 1 the head and hands.
pub fn render_state(s: &FigureState, height: usize, width: usize, out: &mut Vec<f64>) {
    for i in 0..height {
        for j in 0..width {
            let (x, y) = (
                (j as f64 + 0.5) / width as f64,
                (i as f64 + 0.5) / height as f64,
            );
            let torso = blob(x, y, s.center, 0.12);
            out.push((0.15 + 0.2 * y + 0.6 * torso).min(1.0));
        }
    }
    for i in 0..height {
        for j in 0..width {
            let (x, y) = (
                (j as f64 + 0.5) / width as f64,
                (i as f64 + 0.5) / height as f64,
            );
            let v = 0.9 * blob(x, y, s.head, 0.08)
                + 0.8 * blob(x, y, s.left_hand, 0.06)
                + 0.8 * blob(x, y, s.right_hand, 0.06);
            out.push((0.05 + v).min(1.0));
        }
    }
}

/// `n` frames of one period of seeded motion, `2 × height × width` each.
pub fn synthetic_video(n: usize, height: usize, width: usize, seed: u64) -> Result<SyntheticVideo> {
    let mut rng = stream(seed, streams::SYNTHETIC);
    let motion = Motion::draw(&mut rng);
    let states: Vec<FigureState> = (0..n).map(|i| motion.state(i as f64 / n as f64)).collect();
    synthetic_from_states(&states, height, width)
}

/// Renders arbitrary figure states, e.g. held-out phases of a motion.
pub fn synthetic_from_states(
    states: &[FigureState],
    height: usize,
    width: usize,
) -> Result<SyntheticVideo> {
    let mut data = Vec::with_capacity(states.len() * 2 * height * width);
    let mut poses = Vec::with_capacity(states.len());
    for s in states {
        render_state(s, height, width, &mut data);
        poses.push(pose_for_state(s, PoseLayout::WHOLE_BODY)?);
    }
    Ok(SyntheticVideo {
        frames: Video::new(states.len(), 2, height, width, data)?,
        poses: PoseSequence::new(poses)?,
    })
}

/// States of the seeded motion at arbitrary phases in `[0, 1)`.
pub fn synthetic_states(seed: u64, phases: &[f64]) -> Vec<FigureState> {
    let mut rng = stream(seed, streams::SYNTHETIC);
    let motion = Motion::draw(&mut rng);
    phases.iter().map(|&u| motion.state(u)).collect()
}

/// Random whole-body poses with per-landmark validity drawn at `p_valid`.
pub fn random_pose(rng: &mut impl Rng, layout: PoseLayout, p_valid: f64) -> Pose {
    let lms = (0..layout.total())
        .map(|_| {
            let conf = if rng.random_bool(p_valid) {
                rng.random_range(0.3..=1.0)
            } else {
                rng.random_range(0.0..0.3)
            };
            Landmark::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), conf)
        })
        .collect();
    Pose::new(layout, lms).expect("generated landmarks are in range")
}

/// Mean position of a group's landmarks.
pub fn group_centroid(pose: &Pose, group: LandmarkGroup) -> [f64; 2] {
    let g = pose.group(group);
    let n = g.len().max(1) as f64;
    [
        g.iter().map(|l| l.x).sum::<f64>() / n,
        g.iter().map(|l| l.y).sum::<f64>() / n,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_video(8, 16, 16, 3).unwrap();
        assert_eq!(a, synthetic_video(8, 16, 16, 3).unwrap());
        assert_ne!(a.frames, synthetic_video(8, 16, 16, 4).unwrap().frames);
        assert_eq!(a.frames.frames, 8);
        assert_eq!(a.frames.channels, 2);
        assert_eq!(a.poses.len(), 8);
        assert_eq!(a.poses.layout().total(), 133);
        assert!(a.frames.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn poses_follow_the_figure() {
        let states = synthetic_states(5, &[0.0, 0.3]);
        let v = synthetic_from_states(&states, 16, 16).unwrap();
        for (s, p) in states.iter().zip(v.poses.poses()) {
            let c = group_centroid(p, LandmarkGroup::Face);
            assert!((c[0] - s.head[0]).abs() < 1e-9 && (c[1] - s.head[1]).abs() < 1e-9);
            let c = group_centroid(p, LandmarkGroup::RightHand);
            assert!((c[0] - s.right_hand[0]).abs() < 1e-9);
        }
    }
}
