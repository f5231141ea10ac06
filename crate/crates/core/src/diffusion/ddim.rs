//! Deterministic (η = 0) DDIM in both directions.
//!
//! A step from noise level `a` to level `b` with noise estimate `ε` is
//!
//! ```text
//! x̂₀ = (z − √(1 − ᾱ_a)·ε) / √ᾱ_a
//! z' = √ᾱ_b·x̂₀ + √(1 − ᾱ_b)·ε
//! ```
//!
//! Sampling walks the timestep subsequence downwards, inversion walks it
//! upwards; with the same `ε` the two are exact algebraic inverses.
//! Inversion evaluates `ε` at the current latent and the step's source
//! timestep.

use crate::diffusion::conditioning::Conditioning;
use crate::diffusion::denoiser::Denoiser;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::LatentVideo;

fn check_timestep(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    if t > schedule.total_timesteps() {
        return Err(Error::Schedule(format!(
            "timestep {t} beyond T = {}",
            schedule.total_timesteps()
        )));
    }
    Ok(())
}

fn transfer(
    z: &LatentVideo,
    eps: &LatentVideo,
    schedule: &NoiseSchedule,
    t_from: usize,
    t_to: usize,
) -> Result<LatentVideo> {
    check_timestep(schedule, t_from)?;
    check_timestep(schedule, t_to)?;
    z.ensure_same_shape(eps)?;
    if t_from == t_to {
        return Ok(z.clone());
    }
    let ab_from = schedule.alpha_bar(t_from);
    let ab_to = schedule.alpha_bar(t_to);
    let (sa_from, sn_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (sa_to, sn_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let mut out = z.clone();
    for (o, &e) in out.data.iter_mut().zip(&eps.data) {
        let x0 = (*o - sn_from * e) / sa_from;
        *o = sa_to * x0 + sn_to * e;
    }
    Ok(out)
}

/// One denoising step, `t_from ≥ t_to`.
pub fn ddim_sample_step(
    z_t: &LatentVideo,
    t_from: usize,
    t_to: usize,
    eps: &LatentVideo,
    schedule: &NoiseSchedule,
) -> Result<LatentVideo> {
    if t_to > t_from {
        return Err(Error::Schedule(format!(
            "sampling must not increase the timestep ({t_from} → {t_to})"
        )));
    }
    transfer(z_t, eps, schedule, t_from, t_to)
}

/// One inversion step, `t_to ≥ t_from`.
pub fn ddim_inverse_step(
    z_t: &LatentVideo,
    t_from: usize,
    t_to: usize,
    eps: &LatentVideo,
    schedule: &NoiseSchedule,
) -> Result<LatentVideo> {
    if t_to < t_from {
        return Err(Error::Schedule(format!(
            "inversion must not decrease the timestep ({t_from} → {t_to})"
        )));
    }
    transfer(z_t, eps, schedule, t_from, t_to)
}

/// `ε_u + s·(ε_c − ε_u)`. The endpoints `s = 1` and `s = 0` return the
/// conditional and unconditional estimate unchanged.
pub fn cfg_combine(
    eps_cond: &LatentVideo,
    eps_uncond: &LatentVideo,
    scale: f64,
) -> Result<LatentVideo> {
    eps_cond.ensure_same_shape(eps_uncond)?;
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    let mut out = eps_uncond.clone();
    for (o, &c) in out.data.iter_mut().zip(&eps_cond.data) {
        *o += scale * (c - *o);
    }
    Ok(out)
}

fn checked_prediction<D: Denoiser + ?Sized>(
    denoiser: &D,
    z: &LatentVideo,
    t: usize,
    cond: &Conditioning,
) -> Result<LatentVideo> {
    let eps = denoiser.predict_noise(z, t, cond)?;
    if !eps.same_shape(z) {
        return Err(Error::Shape(format!(
            "denoiser returned {}×{}×{}×{} for a {}×{}×{}×{} latent",
            eps.frames,
            eps.channels,
            eps.height,
            eps.width,
            z.frames,
            z.channels,
            z.height,
            z.width
        )));
    }
    Ok(eps)
}

/// Guided noise estimate. With `scale == 1` the unconditional branch is
/// never evaluated.
pub fn guided_noise<D: Denoiser + ?Sized>(
    denoiser: &D,
    z: &LatentVideo,
    t: usize,
    cond: &Conditioning,
    scale: f64,
) -> Result<LatentVideo> {
    let eps_c = checked_prediction(denoiser, z, t, cond)?;
    if scale == 1.0 {
        return Ok(eps_c);
    }
    let eps_u = checked_prediction(denoiser, z, t, &cond.unconditional())?;
    cfg_combine(&eps_c, &eps_u, scale)
}

/// Maps a clean latent to noise level `T` along `0 → t_1 → … → t_S`.
pub fn ddim_invert<D: Denoiser + ?Sized>(
    x0: &LatentVideo,
    denoiser: &D,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
) -> Result<LatentVideo> {
    let mut z = x0.clone();
    let mut t_prev = 0;
    for &t in schedule.timesteps() {
        let eps = guided_noise(denoiser, &z, t_prev, cond, guidance_scale)?;
        z = ddim_inverse_step(&z, t_prev, t, &eps, schedule)?;
        t_prev = t;
    }
    Ok(z)
}

/// Denoises from level `T` to 0 along the reversed subsequence.
pub fn ddim_sample<D: Denoiser + ?Sized>(
    z_t: &LatentVideo,
    denoiser: &D,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
) -> Result<LatentVideo> {
    ddim_sample_with(z_t, denoiser, cond, schedule, guidance_scale, |_, _| Ok(()))
}

/// [`ddim_sample`] with a hook called on the latent before every step; the
/// hook receives the 1-based step number.
pub fn ddim_sample_with<D, F>(
    z_t: &LatentVideo,
    denoiser: &D,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
    mut before_step: F,
) -> Result<LatentVideo>
where
    D: Denoiser + ?Sized,
    F: FnMut(usize, &mut LatentVideo) -> Result<()>,
{
    let ts = schedule.timesteps();
    let mut z = z_t.clone();
    for (step, idx) in (0..ts.len()).rev().enumerate() {
        before_step(step + 1, &mut z)?;
        let t_from = ts[idx];
        let t_to = if idx == 0 { 0 } else { ts[idx - 1] };
        let eps = guided_noise(denoiser, &z, t_from, cond, guidance_scale)?;
        z = ddim_sample_step(&z, t_from, t_to, &eps, schedule)?;
    }
    Ok(z)
}
