use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pose::{LandmarkGroup, Pose};
use crate::rng::{normal_vec, stream, streams};

/// One heatmap channel per landmark group.
pub const POSE_CHANNELS: usize = 4;

/// Per-frame conditioning: a rasterized pose and a prompt embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector {
    /// `POSE_CHANNELS × h × w` heatmap at latent resolution.
    pub pose_map: Vec<f64>,
    pub prompt: Vec<f64>,
    /// Set on the unconditional branch of guidance, whose prompt is zero.
    pub is_null: bool,
}

/// Conditioning for a whole clip, plus the 1-based key frame that
/// key-frame attention draws keys and values from.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub frames: Vec<ConditioningVector>,
    pub key_frame: usize,
}

impl Conditioning {
    /// Same poses, null prompt.
    pub fn unconditional(&self) -> Conditioning {
        Conditioning {
            frames: self
                .frames
                .iter()
                .map(|c| ConditioningVector {
                    pose_map: c.pose_map.clone(),
                    prompt: vec![0.0; c.prompt.len()],
                    is_null: true,
                })
                .collect(),
            key_frame: self.key_frame,
        }
    }

    pub fn with_prompt(&self, prompt: &[f64]) -> Conditioning {
        Conditioning {
            frames: self
                .frames
                .iter()
                .map(|c| ConditioningVector {
                    pose_map: c.pose_map.clone(),
                    prompt: prompt.to_vec(),
                    is_null: false,
                })
                .collect(),
            key_frame: self.key_frame,
        }
    }

    pub fn select(&self, indices: &[usize], key_frame: usize) -> Conditioning {
        Conditioning {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            key_frame,
        }
    }
}

/// Gaussian heatmaps (σ = one cell) of each group's valid landmarks,
/// max-combined within a group.
pub fn rasterize_pose(pose: &Pose, height: usize, width: usize, threshold: f64) -> Vec<f64> {
    let mut out = vec![0.0; POSE_CHANNELS * height * width];
    for (g, group) in LandmarkGroup::ALL.iter().enumerate() {
        let pts: Vec<(f64, f64)> = pose
            .group(*group)
            .iter()
            .filter(|l| l.is_valid(threshold))
            .map(|l| (l.x * width as f64, l.y * height as f64))
            .collect();
        if pts.is_empty() {
            continue;
        }
        for i in 0..height {
            for j in 0..width {
                let (cx, cy) = (j as f64 + 0.5, i as f64 + 0.5);
                let best = pts
                    .iter()
                    .map(|&(x, y)| (-((x - cx).powi(2) + (y - cy).powi(2)) / 2.0).exp())
                    .fold(0.0, f64::max);
                out[(g * height + i) * width + j] = best;
            }
        }
    }
    out
}

/// Deterministic stand-in for a text encoder: a seeded Gaussian vector
/// keyed by the prompt string. The empty prompt maps to zero.
pub fn prompt_embedding(prompt: &str, dim: usize, seed: u64) -> Vec<f64> {
    if prompt.is_empty() {
        return vec![0.0; dim];
    }
    let digest = Sha256::digest(prompt.as_bytes());
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    let mut rng = stream(seed ^ u64::from_le_bytes(key), streams::PROMPT);
    normal_vec(&mut rng, dim)
}

pub fn build_conditioning(
    poses: &[Pose],
    prompt: &[f64],
    height: usize,
    width: usize,
    threshold: f64,
    key_frame: usize,
) -> Result<Conditioning> {
    if key_frame == 0 || key_frame > poses.len() {
        return Err(Error::OutOfRange(format!(
            "key frame {key_frame} not in 1..={}",
            poses.len()
        )));
    }
    Ok(Conditioning {
        frames: poses
            .iter()
            .map(|p| ConditioningVector {
                pose_map: rasterize_pose(p, height, width, threshold),
                prompt: prompt.to_vec(),
                is_null: false,
            })
            .collect(),
        key_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Landmark, PoseLayout};

    #[test]
    fn heatmap_peaks_at_landmark_cell() {
        let layout = PoseLayout {
            body: 1,
            face: 1,
            hand: 1,
        };
        let pose = Pose::new(
            layout,
            vec![
                Landmark::new(0.5625, 0.5625, 1.0),
                Landmark::new(0.1, 0.1, 0.0),
                Landmark::new(0.0625, 0.0625, 1.0),
                Landmark::new(0.9375, 0.0625, 1.0),
            ],
        )
        .unwrap();
        let m = rasterize_pose(&pose, 8, 8, 0.3);
        assert_eq!(m[4 * 8 + 4], 1.0);
        // face landmark is invalid
        assert!(m[64..128].iter().all(|&v| v == 0.0));
        assert_eq!(m[128], 1.0);
        assert_eq!(m[192 + 7], 1.0);
    }

    #[test]
    fn prompt_vectors() {
        assert_eq!(prompt_embedding("", 4, 1), vec![0.0; 4]);
        assert_eq!(
            prompt_embedding("a dancer", 6, 1),
            prompt_embedding("a dancer", 6, 1)
        );
        assert_ne!(
            prompt_embedding("a dancer", 6, 1),
            prompt_embedding("a singer", 6, 1)
        );
    }
}
