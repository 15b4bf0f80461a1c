//! Clip-level augmentations: crop, horizontal flip, time masking and mixup.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::video::Video;

/// Square `size`×`size` window with top-left corner `(top, left)`.
pub fn crop(video: &Video, top: usize, left: usize, size: usize) -> Result<Video> {
    if size == 0 || top + size > video.height || left + size > video.width {
        return Err(Error::InvalidInput(format!(
            "crop {size}x{size} at ({top}, {left}) does not fit a {}x{} frame",
            video.height, video.width
        )));
    }
    let mut data = Vec::with_capacity(video.frames * size * size);
    for t in 0..video.frames {
        let frame = video.frame(t);
        for y in top..top + size {
            let row = y * video.width;
            data.extend_from_slice(&frame[row + left..row + left + size]);
        }
    }
    Video::new(video.frames, size, size, data, video.boundary.clone())
}

fn check_crop(video: &Video, size: usize) -> Result<()> {
    if size == 0 || size > video.height || size > video.width {
        return Err(Error::InvalidInput(format!(
            "crop size {size} larger than {}x{} frame",
            video.height, video.width
        )));
    }
    Ok(())
}

pub fn center_crop(video: &Video, size: usize) -> Result<Video> {
    check_crop(video, size)?;
    crop(video, (video.height - size) / 2, (video.width - size) / 2, size)
}

pub fn random_crop(video: &Video, size: usize, rng: &mut impl Rng) -> Result<Video> {
    check_crop(video, size)?;
    let top = rng.random_range(0..=video.height - size);
    let left = rng.random_range(0..=video.width - size);
    crop(video, top, left, size)
}

/// Mirrors every frame left to right.
pub fn flip(video: &Video) -> Video {
    let mut out = video.clone();
    let w = video.width;
    for row in out.data.chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialAugment {
    pub crop_size: usize,
    pub random_crop: bool,
    pub flip: bool,
}

/// One crop offset and one flip decision per clip, shared by all frames.
/// Without random cropping the center window is used.
pub fn spatial_augment(video: &Video, cfg: &SpatialAugment, rng: &mut impl Rng) -> Result<Video> {
    let out = if cfg.random_crop {
        random_crop(video, cfg.crop_size, rng)?
    } else {
        center_crop(video, cfg.crop_size)?
    };
    if cfg.flip && rng.random::<f64>() > 0.5 {
        Ok(flip(&out))
    } else {
        Ok(out)
    }
}

/// Evaluation path: center crop, no flip.
pub fn eval_view(video: &Video, crop_size: usize) -> Result<Video> {
    center_crop(video, crop_size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskFill {
    Mean,
    Zeros,
}

impl MaskFill {
    pub fn name(self) -> &'static str {
        match self {
            MaskFill::Mean => "mean",
            MaskFill::Zeros => "zeros",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(MaskFill::Mean),
            "zeros" => Some(MaskFill::Zeros),
            _ => None,
        }
    }
}

/// Replaces frames `start..start + len` with the clip's mean frame or zeros.
/// The boundary mask is left as is.
pub fn mask_span(video: &Video, start: usize, len: usize, fill: MaskFill) -> Result<Video> {
    if len == 0 || start + len > video.frames {
        return Err(Error::InvalidInput(format!(
            "mask span {start}..{} outside {} frames",
            start + len,
            video.frames
        )));
    }
    let replacement = match fill {
        MaskFill::Mean => video.mean_frame(),
        MaskFill::Zeros => vec![0.0; video.frame_len()],
    };
    let mut out = video.clone();
    for t in start..start + len {
        out.frame_mut(t).copy_from_slice(&replacement);
    }
    Ok(out)
}

/// Masks one contiguous span whose length is uniform in `[1, max_span]`
/// and whose start is uniform over the valid positions. Returns the
/// masked clip with the span's start and length.
pub fn time_mask(video: &Video, max_span: usize, fill: MaskFill, rng: &mut impl Rng) -> Result<(Video, usize, usize)> {
    if max_span == 0 || max_span > video.frames {
        return Err(Error::InvalidInput(format!(
            "time-mask span {max_span} must be in 1..={}",
            video.frames
        )));
    }
    let len = rng.random_range(1..=max_span);
    let start = rng.random_range(0..=video.frames - len);
    Ok((mask_span(video, start, len, fill)?, start, len))
}

/// Default longest mask: 40% of the clip, at least one frame.
pub fn default_max_span(frames: usize, ratio: f64) -> usize {
    ((frames as f64 * ratio).round() as usize).clamp(1, frames)
}

/// `λ·a + (1-λ)·b` for pixels and boundary masks alike.
pub fn mixup(a: &Video, b: &Video, lambda: f64) -> Result<Video> {
    if (a.frames, a.height, a.width) != (b.frames, b.height, b.width) {
        return Err(Error::InvalidInput(format!(
            "mixup of {}x{}x{} and {}x{}x{} clips",
            a.frames, a.height, a.width, b.frames, b.height, b.width
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixup weight {lambda} outside [0, 1]")));
    }
    let blend = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(&p, &q)| (lambda * p + (1.0 - lambda) * q).clamp(p.min(q), p.max(q)))
            .collect()
    };
    Video::new(a.frames, a.height, a.width, blend(&a.data, &b.data), blend(&a.boundary, &b.boundary))
}

/// Draws the mixup weight from `Beta(α, α)`.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}
