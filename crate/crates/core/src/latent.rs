//! Channel-major latent grids and frame stacks.

use crate::error::{Error, Result};

/// One frame: `channels × height × width`, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "latent grid dimensions must be positive, got {channels}×{height}×{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "latent grid {channels}×{height}×{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "latent grid contains non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}×{}×{} vs {}×{}×{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// A stack of frames shaped `(frames, channels, height, width)`.
///
/// Used both for pixel-space frames and for their latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub type LatentVideo = Video;

impl Video {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Shape("video must have at least one frame".into()));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "frame dimensions must be positive, got {channels}×{height}×{width}"
            )));
        }
        let expected = frames * channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "video {frames}×{channels}×{height}×{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "video contains non-finite values".into(),
            ));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..*self
        }
    }

    pub fn from_frames(frames: &[LatentGrid]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero frames".into()))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for (i, f) in frames.iter().enumerate() {
            first
                .ensure_same_shape(f)
                .map_err(|e| Error::Shape(format!("frame {}: {e}", i + 1)))?;
            data.extend_from_slice(&f.data);
        }
        Ok(Self {
            frames: frames.len(),
            channels: first.channels,
            height: first.height,
            width: first.width,
            data,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Zero-based frame view.
    pub fn frame_data(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_data_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Zero-based frame copy.
    pub fn frame(&self, i: usize) -> LatentGrid {
        LatentGrid {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.frame_data(i).to_vec(),
        }
    }

    pub fn set_frame(&mut self, i: usize, grid: &LatentGrid) -> Result<()> {
        if grid.channels != self.channels || grid.height != self.height || grid.width != self.width
        {
            return Err(Error::Shape(format!(
                "cannot store {}×{}×{} grid in a {}×{}×{} video",
                grid.channels, grid.height, grid.width, self.channels, self.height, self.width
            )));
        }
        self.frame_data_mut(i).copy_from_slice(&grid.data);
        Ok(())
    }

    pub fn frame_grids(&self) -> Vec<LatentGrid> {
        (0..self.frames).map(|i| self.frame(i)).collect()
    }

    /// Picks the given zero-based frames, in order.
    pub fn select_frames(&self, indices: &[usize]) -> Video {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            data.extend_from_slice(self.frame_data(i));
        }
        Video {
            frames: indices.len(),
            data,
            ..*self
        }
    }

    pub fn same_shape(&self, other: &Video) -> bool {
        self.frames == other.frames
            && self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    pub(crate) fn ensure_same_shape(&self, other: &Video) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}×{}×{}×{} vs {}×{}×{}×{}",
                self.frames,
                self.channels,
                self.height,
                self.width,
                other.frames,
                other.channels,
                other.height,
                other.width
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Video) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
