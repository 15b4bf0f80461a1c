//! Quantized clip store and its little-endian `ISND` file format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_new, Reader};
use crate::video::Video;

pub const DATASET_MAGIC: &[u8; 4] = b"ISND";
pub const DATASET_VERSION: u32 = 1;

/// One stored clip: label, 0/1 mask and `T·S·S` 8-bit pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredSample {
    pub label: u32,
    pub mask: Vec<u8>,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub frames: usize,
    pub size: usize,
    pub classes: usize,
    pub samples: Vec<StoredSample>,
}

/// `round(255·v)` of a value clamped to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0
}

impl Dataset {
    pub fn new(frames: usize, size: usize, classes: usize) -> Self {
        Dataset {
            frames,
            size,
            classes,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Quantizes and appends a clip with a 0/1 boundary mask.
    pub fn push(&mut self, video: &Video, label: usize) -> Result<()> {
        if (video.frames, video.height, video.width) != (self.frames, self.size, self.size) {
            return Err(Error::InvalidInput(format!(
                "clip {}x{}x{} does not match dataset {}x{}x{}",
                video.frames, video.height, video.width, self.frames, self.size, self.size
            )));
        }
        if label >= self.classes {
            return Err(Error::InvalidInput(format!("label {label} out of range for {} classes", self.classes)));
        }
        self.samples.push(StoredSample {
            label: label as u32,
            mask: video.boundary.iter().map(|&b| u8::from(b >= 0.5)).collect(),
            pixels: video.data.iter().map(|&v| quantize(v)).collect(),
        });
        Ok(())
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].label as usize
    }

    /// Dequantized clip `i`.
    pub fn video(&self, i: usize) -> Video {
        let s = &self.samples[i];
        Video {
            frames: self.frames,
            height: self.size,
            width: self.size,
            data: s.pixels.iter().map(|&q| dequantize(q)).collect(),
            boundary: s.mask.iter().map(|&m| m as f64).collect(),
        }
    }

    /// Subset with the given sample indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..Dataset::new(self.frames, self.size, self.classes)
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for s in &self.samples {
            h[s.label as usize] += 1;
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let px = self.frames * self.size * self.size;
        let mut out = Vec::with_capacity(24 + self.samples.len() * (4 + self.frames + px));
        out.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION, self.samples.len() as u32, self.frames as u32, self.size as u32, self.classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&s.label.to_le_bytes());
            out.extend_from_slice(&s.mask);
            out.extend_from_slice(&s.pixels);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let count = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let size = r.u32()? as usize;
        let classes = r.u32()? as usize;
        if frames == 0 || size == 0 || classes == 0 {
            return Err(Error::Format(format!("dataset header has zero extent: T={frames} S={size} C={classes}")));
        }
        let px = frames * size * size;
        let mut ds = Dataset::new(frames, size, classes);
        for i in 0..count {
            let label = r.u32()?;
            if label as usize >= classes {
                return Err(Error::Format(format!("sample {i}: label {label} out of range for {classes} classes")));
            }
            let mask = r.bytes(frames)?.to_vec();
            if mask.iter().any(|&m| m > 1) {
                return Err(Error::Format(format!("sample {i}: boundary mask entries must be 0 or 1")));
            }
            let pixels = r.bytes(px)?.to_vec();
            ds.samples.push(StoredSample { label, mask, pixels });
        }
        r.finish()?;
        Ok(ds)
    }

    /// Writes to a path that must not exist unless `force` is set.
    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        write_new(path, &self.to_bytes(), force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
