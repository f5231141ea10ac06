use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training-time noise levels plus the DDIM timestep subsequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    total_timesteps: usize,
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_timesteps: 1000,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, sampling_steps: usize) -> Result<NoiseSchedule> {
        build_schedule(
            self.train_timesteps,
            sampling_steps,
            self.beta_start,
            self.beta_end,
        )
    }
}

/// Linear betas from `beta_start` to `beta_end` over `t = 1..=T`,
/// `ᾱ_t = Π_{i ≤ t} (1 − β_i)` with `ᾱ_0 = 1`, and `S` evenly spaced
/// sampling timesteps `⌊s·T/S⌋` for `s = 1..=S`.
pub fn build_schedule(
    total_timesteps: usize,
    sampling_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if total_timesteps == 0 {
        return Err(Error::Schedule("need at least one timestep".into()));
    }
    if sampling_steps == 0 || sampling_steps > total_timesteps {
        return Err(Error::Schedule(format!(
            "sampling steps {sampling_steps} not in 1..={total_timesteps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Schedule(format!(
            "betas must satisfy 0 < start ≤ end < 1, got {beta_start} → {beta_end}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(total_timesteps + 1);
    alpha_bar.push(1.0);
    let span = (total_timesteps - 1).max(1) as f64;
    for t in 1..=total_timesteps {
        let beta = beta_start + (beta_end - beta_start) * (t - 1) as f64 / span;
        let prev = alpha_bar[t - 1];
        alpha_bar.push(prev * (1.0 - beta));
    }
    if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Schedule(
            "alpha_bar is not strictly decreasing".into(),
        ));
    }
    let timesteps = (1..=sampling_steps)
        .map(|s| s * total_timesteps / sampling_steps)
        .collect();
    Ok(NoiseSchedule {
        total_timesteps,
        alpha_bar,
        timesteps,
    })
}

impl NoiseSchedule {
    pub fn total_timesteps(&self) -> usize {
        self.total_timesteps
    }

    pub fn sampling_steps(&self) -> usize {
        self.timesteps.len()
    }

    /// Strictly increasing, ending at `T`.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Same noise levels, different number of sampling steps.
    pub fn with_sampling_steps(&self, steps: usize) -> Result<NoiseSchedule> {
        if steps == 0 || steps > self.total_timesteps {
            return Err(Error::Schedule(format!(
                "sampling steps {steps} not in 1..={}",
                self.total_timesteps
            )));
        }
        Ok(NoiseSchedule {
            timesteps: (1..=steps)
                .map(|s| s * self.total_timesteps / steps)
                .collect(),
            ..self.clone()
        })
    }
}

/// Training iterations for `n` training frames: the line through
/// (8, 100) and (100, 2000), `round((475·n − 1500) / 23)`, rounding half
/// away from zero. Evaluated in exact integer arithmetic.
pub fn max_train_steps(n: usize) -> i64 {
    let num = 475 * n as i64 - 1500;
    let den = 23;
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}
