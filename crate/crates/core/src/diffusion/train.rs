//! One-shot fine-tuning on a single video.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::codec::encode;
use crate::diffusion::conditioning::{rasterize_pose, Conditioning, ConditioningVector};
use crate::diffusion::denoiser::Denoiser;
use crate::diffusion::schedule::{max_train_steps, NoiseSchedule};
use crate::diffusion::toy::{ToyDenoiser, ToyGradients};
use crate::error::{Error, Result};
use crate::latent::{LatentVideo, Video};
use crate::pose::PoseSequence;
use crate::rng::normal_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Overrides the frame-count schedule when set.
    pub max_steps: Option<usize>,
    pub optimizer: Optimizer,
    pub encoder_factor: usize,
    pub validity_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 8,
            max_steps: None,
            optimizer: Optimizer::Adam,
            encoder_factor: 2,
            validity_threshold: crate::pose::DEFAULT_VALIDITY_THRESHOLD,
        }
    }
}

impl TrainConfig {
    /// Iterations for `n` training frames. The frame-count formula is
    /// negative for very short videos, so it is clamped to one.
    pub fn steps_for(&self, n: usize) -> usize {
        self.max_steps
            .unwrap_or_else(|| max_train_steps(n).max(1) as usize)
    }
}

/// Clean latents with their conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub latents: LatentVideo,
    pub cond: Conditioning,
}

/// A forward-diffused batch: `z_t = √ᾱ_t·z_0 + √(1 − ᾱ_t)·ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBatch {
    pub t: usize,
    pub noise: LatentVideo,
    pub noisy: LatentVideo,
}

/// Draws `t` uniformly from `1..=T` and `ε` from the standard normal.
pub fn draw_noisy_batch(
    latents: &LatentVideo,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> NoisyBatch {
    let t = rng.random_range(1..=schedule.total_timesteps());
    let noise = LatentVideo {
        data: normal_vec(rng, latents.data.len()),
        ..*latents
    };
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let noisy = LatentVideo {
        data: latents
            .data
            .iter()
            .zip(&noise.data)
            .map(|(x, e)| sa * x + sn * e)
            .collect(),
        ..*latents
    };
    NoisyBatch { t, noise, noisy }
}

/// Mean squared error between the true noise and the prediction.
pub fn denoising_loss<D: Denoiser + ?Sized>(
    denoiser: &D,
    noisy: &NoisyBatch,
    cond: &Conditioning,
) -> Result<f64> {
    let pred = denoiser.predict_noise(&noisy.noisy, noisy.t, cond)?;
    noisy.noise.ensure_same_shape(&pred)?;
    let n = pred.data.len() as f64;
    Ok(pred
        .data
        .iter()
        .zip(&noisy.noise.data)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / n)
}

/// Draws a noisy version of `batch` and returns the loss with gradients
/// for every trainable parameter.
pub fn training_loss(
    model: &ToyDenoiser,
    batch: &TrainingBatch,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, ToyGradients)> {
    let noisy = draw_noisy_batch(&batch.latents, schedule, rng);
    model.mse_and_gradients(&noisy.noisy, noisy.t, &batch.cond, &noisy.noise)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Trailing moving average over `window` iterations, at each iteration.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut sum = 0.0;
        for (i, &l) in self.losses.iter().enumerate() {
            sum += l;
            if i >= w {
                sum -= self.losses[i - w];
            }
            out.push(sum / (i + 1).min(w) as f64);
        }
        out
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn minibatch(n: usize, size: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = if n >= size {
        rand::seq::index::sample(rng, n, size).into_vec()
    } else {
        (0..size).map(|_| rng.random_range(0..n)).collect()
    };
    idx.sort_unstable();
    idx
}

/// Fine-tunes the trainable parameters of `model` on a single video.
///
/// Each iteration encodes a sorted minibatch of frames (drawn without
/// replacement when the video is long enough, with replacement otherwise),
/// takes one optimizer step on the denoising loss, and records the loss.
pub fn train_one_shot(
    mut model: ToyDenoiser,
    frames: &Video,
    poses: &PoseSequence,
    prompt: &[f64],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(ToyDenoiser, TrainReport)> {
    if frames.frames != poses.len() {
        return Err(Error::Shape(format!(
            "{} training frames but {} poses",
            frames.frames,
            poses.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "learning rate must be finite and non-negative, got {}",
            config.learning_rate
        )));
    }
    let latents = encode(frames, config.encoder_factor)?;
    let all_cond: Vec<ConditioningVector> = poses
        .poses()
        .iter()
        .map(|p| ConditioningVector {
            pose_map: rasterize_pose(p, latents.height, latents.width, config.validity_threshold),
            prompt: prompt.to_vec(),
            is_null: false,
        })
        .collect();
    let all_cond = Conditioning {
        frames: all_cond,
        key_frame: 1,
    };

    let steps = config.steps_for(frames.frames);
    let mut params = model.trainable();
    let mut adam = AdamState {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        step: 0,
    };
    let mut losses = Vec::with_capacity(steps);
    for iteration in 1..=steps {
        let idx = minibatch(frames.frames, config.batch_size, rng);
        let batch = TrainingBatch {
            latents: latents.select_frames(&idx),
            cond: all_cond.select(&idx, 1),
        };
        let (loss, grads) = training_loss(&model, &batch, schedule, rng)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration, loss });
        }
        losses.push(loss);
        let g = grads.flatten();
        let lr = config.learning_rate;
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= lr * gi;
                }
            }
            Optimizer::Adam => {
                adam.step += 1;
                let c1 = 1.0 - BETA1.powi(adam.step);
                let c2 = 1.0 - BETA2.powi(adam.step);
                for i in 0..params.len() {
                    adam.m[i] = BETA1 * adam.m[i] + (1.0 - BETA1) * g[i];
                    adam.v[i] = BETA2 * adam.v[i] + (1.0 - BETA2) * g[i] * g[i];
                    let m_hat = adam.m[i] / c1;
                    let v_hat = adam.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                loss: f64::NAN,
            });
        }
        model.set_trainable(&params)?;
    }
    Ok((
        model,
        TrainReport {
            iterations: steps,
            losses,
        },
    ))
}
