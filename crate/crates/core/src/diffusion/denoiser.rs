use crate::diffusion::conditioning::Conditioning;
use crate::error::Result;
use crate::latent::LatentVideo;

/// Noise prediction `ε_θ(z_t, t, cond)`.
///
/// Implementations must be deterministic and return a video shaped like `z`.
pub trait Denoiser {
    fn predict_noise(&self, z: &LatentVideo, t: usize, cond: &Conditioning) -> Result<LatentVideo>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, z: &LatentVideo, t: usize, cond: &Conditioning) -> Result<LatentVideo> {
        (**self).predict_noise(z, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&self, z: &LatentVideo, t: usize, cond: &Conditioning) -> Result<LatentVideo> {
        (**self).predict_noise(z, t, cond)
    }
}

/// Predicts the same value everywhere, independent of state and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDenoiser {
    pub value: f64,
}

impl ConstantDenoiser {
    pub fn new(value: f64) -> Self {
        Self { value }
    }

    pub fn zero() -> Self {
        Self { value: 0.0 }
    }
}

impl Denoiser for ConstantDenoiser {
    fn predict_noise(
        &self,
        z: &LatentVideo,
        _t: usize,
        _cond: &Conditioning,
    ) -> Result<LatentVideo> {
        let mut out = z.zeros_like();
        out.data.iter_mut().for_each(|v| *v = self.value);
        Ok(out)
    }
}
