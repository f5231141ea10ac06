use crate::error::{Error, Result};
use crate::latent::Video;

/// Lossless space-to-depth encoder: each `factor × factor` pixel block of a
/// channel becomes `factor²` latent channels, ordered
/// `(channel, block_row, block_col)`.
pub fn encode(frames: &Video, factor: usize) -> Result<Video> {
    if factor == 0 {
        return Err(Error::InvalidInput(
            "encoder factor must be positive".into(),
        ));
    }
    if !frames.height.is_multiple_of(factor) || !frames.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}×{} frames are not divisible by encoder factor {factor}",
            frames.height, frames.width
        )));
    }
    let (h, w) = (frames.height / factor, frames.width / factor);
    let lc = frames.channels * factor * factor;
    let mut data = vec![0.0; frames.frames * lc * h * w];
    for f in 0..frames.frames {
        for c in 0..frames.channels {
            for y in 0..frames.height {
                for x in 0..frames.width {
                    let src = ((f * frames.channels + c) * frames.height + y) * frames.width + x;
                    let ch = (c * factor + y % factor) * factor + x % factor;
                    let dst = ((f * lc + ch) * h + y / factor) * w + x / factor;
                    data[dst] = frames.data[src];
                }
            }
        }
    }
    Video::new(frames.frames, lc, h, w, data)
}

/// Inverse of [`encode`].
pub fn decode(latents: &Video, factor: usize) -> Result<Video> {
    if factor == 0 {
        return Err(Error::InvalidInput(
            "encoder factor must be positive".into(),
        ));
    }
    let ff = factor * factor;
    if !latents.channels.is_multiple_of(ff) {
        return Err(Error::Shape(format!(
            "{} latent channels are not divisible by {ff}",
            latents.channels
        )));
    }
    let c_px = latents.channels / ff;
    let (ph, pw) = (latents.height * factor, latents.width * factor);
    let mut data = vec![0.0; latents.data.len()];
    for f in 0..latents.frames {
        for c in 0..c_px {
            for y in 0..ph {
                for x in 0..pw {
                    let ch = (c * factor + y % factor) * factor + x % factor;
                    let src = ((f * latents.channels + ch) * latents.height + y / factor)
                        * latents.width
                        + x / factor;
                    let dst = ((f * c_px + c) * ph + y) * pw + x;
                    data[dst] = latents.data[src];
                }
            }
        }
    }
    Video::new(latents.frames, c_px, ph, pw, data)
}
