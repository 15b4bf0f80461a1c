//! Grayscale clips with their per-frame word-boundary mask.

use crate::error::{Error, Result};

/// `T×H×W` grayscale frames (one channel) in row-major order, plus a
/// length-`T` boundary mask. The mask is 0/1 for real clips and a real
/// blend after mixup.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!("empty clip {frames}x{height}x{width}")));
        }
        if data.len() != frames * height * width || boundary.len() != frames {
            return Err(Error::InvalidInput(format!(
                "clip {frames}x{height}x{width} has {} pixels and {} mask entries",
                data.len(),
                boundary.len()
            )));
        }
        Ok(Video {
            frames,
            height,
            width,
            data,
            boundary,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    /// Pixel-wise mean over time.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.frame_len()];
        for t in 0..self.frames {
            for (m, v) in mean.iter_mut().zip(self.frame(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.frames as f64);
        mean
    }
}
