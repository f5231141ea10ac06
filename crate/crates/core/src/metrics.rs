//! Pose-sequence and reconstruction metrics.

use crate::error::{Error, Result};
use crate::pose::{ensure_same_layout, pose_distance, PoseSequence};

/// Sum over test poses of the distance to the nearest training pose.
pub fn video_sim(train: &PoseSequence, test: &PoseSequence, threshold: f64) -> Result<f64> {
    ensure_same_layout(train.layout(), test.layout())?;
    let mut total = 0.0;
    for p in test.poses() {
        let mut nearest = f64::INFINITY;
        for q in train.poses() {
            nearest = nearest.min(pose_distance(p, q, threshold)?);
        }
        total += nearest;
    }
    Ok(total)
}

/// Mean squared keypoint error between corresponding poses, pooled over
/// frames, shared valid landmarks and both coordinates. `+inf` when no
/// landmark is valid in both sequences.
pub fn mse_p(a: &PoseSequence, b: &PoseSequence, threshold: f64) -> Result<f64> {
    ensure_same_layout(a.layout(), b.layout())?;
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "pose sequences have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.poses().iter().zip(b.poses()) {
        for (la, lb) in pa.landmarks().iter().zip(pb.landmarks()) {
            if la.is_valid(threshold) && lb.is_valid(threshold) {
                let dx = la.x - lb.x;
                let dy = la.y - lb.y;
                sum += dx * dx + dy * dy;
                count += 2;
            }
        }
    }
    Ok(if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    })
}

/// PSNR for data with peak value 1: `10·log10(1 / mse)`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot compare {} values with {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("PSNR of empty inputs".into()));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Landmark, Pose, PoseLayout};

    fn seq(offsets: &[f64]) -> PoseSequence {
        let layout = PoseLayout::default();
        PoseSequence::new(
            offsets
                .iter()
                .map(|&o| {
                    let lms = (0..layout.total())
                        .map(|i| Landmark::new(0.1 + o + i as f64 * 1e-3, 0.2 + o, 1.0))
                        .collect();
                    Pose::new(layout, lms).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn video_sim_of_subset_is_zero() {
        let train = seq(&[0.0, 0.1, 0.2, 0.3]);
        let test = seq(&[0.3, 0.0, 0.0]);
        assert_eq!(video_sim(&train, &test, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn video_sim_single_candidate() {
        let train = seq(&[0.0]);
        let test = seq(&[0.1, 0.2]);
        let d1 = pose_distance(&test[0], &train[0], 0.3).unwrap();
        let d2 = pose_distance(&test[1], &train[0], 0.3).unwrap();
        assert_eq!(video_sim(&train, &test, 0.3).unwrap(), d1 + d2);
    }

    #[test]
    fn mse_p_shift() {
        let a = seq(&[0.0, 0.05]);
        let b = PoseSequence::new(a.poses().iter().map(|p| p.translated(0.02, 0.02)).collect())
            .unwrap();
        assert_eq!(mse_p(&a, &a, 0.3).unwrap(), 0.0);
        assert!((mse_p(&a, &b, 0.3).unwrap() - 4e-4).abs() < 1e-12);
        assert!(mse_p(&a, &seq(&[0.0]), 0.3).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), f64::INFINITY);
        assert!((psnr(&[0.0, 0.0], &[0.1, 0.1]).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&[0.0], &[0.0, 1.0]).is_err());
    }
}
