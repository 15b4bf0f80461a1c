//! Procedural "lip-motion" clips: a mouth ellipse whose vertical aperture
//! follows a class-specific motion signature inside one contiguous active
//! span and stays closed elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::video::Video;

/// How the mouth opens while the word is spoken: `cycles` open/close
/// cycles across the span, peak aperture `amplitude` (fraction of the
/// maximum), and `asymmetry`, the fraction of each cycle spent opening.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Signature {
    pub cycles: f64,
    pub amplitude: f64,
    pub asymmetry: f64,
}

impl Signature {
    /// Lattice point `k`: cycles `1 + k/4`, amplitude alternating
    /// 0.5/1.0 every two classes, asymmetry alternating 0.25/0.75.
    pub fn lattice(k: usize) -> Self {
        Signature {
            cycles: (1 + k / 4) as f64,
            amplitude: [0.5, 1.0][(k / 2) % 2],
            asymmetry: [0.25, 0.75][k % 2],
        }
    }

    /// Distance with each coordinate scaled by its lattice spacing.
    pub fn distance(&self, other: &Signature) -> f64 {
        let d = [
            self.cycles - other.cycles,
            (self.amplitude - other.amplitude) / 0.5,
            (self.asymmetry - other.asymmetry) / 0.5,
        ];
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Aperture in `[0, amplitude]` at relative position `u ∈ [0, 1]` of
    /// the active span.
    pub fn aperture(&self, u: f64) -> f64 {
        let phase = (u * self.cycles).fract();
        let tri = if phase < self.asymmetry {
            phase / self.asymmetry
        } else {
            (1.0 - phase) / (1.0 - self.asymmetry)
        };
        self.amplitude * 0.5 * (1.0 - (std::f64::consts::PI * tri).cos())
    }
}

/// Smallest allowed scaled distance between two class signatures.
pub const MIN_SEPARATION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub frames: usize,
    pub size: usize,
    pub signatures: Vec<Signature>,
    /// Multiplicative brightness range.
    pub brightness: (f64, f64),
    /// Largest per-clip mouth-center offset in pixels.
    pub jitter: f64,
    /// Multiplicative mouth-size range.
    pub mouth_scale: (f64, f64),
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Active-span length range, inclusive.
    pub span: (usize, usize),
}

impl SynthSpec {
    /// Spec with lattice signatures and the given nuisance settings.
    pub fn new(classes: usize, frames: usize, size: usize) -> Result<Self> {
        let spec = SynthSpec {
            classes,
            frames,
            size,
            signatures: (0..classes).map(Signature::lattice).collect(),
            brightness: (0.85, 1.15),
            jitter: size as f64 / 16.0,
            mouth_scale: (0.9, 1.1),
            noise: 0.03,
            span: ((frames * 2 / 5).max(3).min(frames), (frames * 7 / 10).max(3).min(frames)),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic data: {msg}")));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.signatures.len() != self.classes {
            return bad(format!("{} signatures for {} classes", self.signatures.len(), self.classes));
        }
        if self.size < 8 || self.frames == 0 {
            return bad(format!("frames {} and size {} too small", self.frames, self.size));
        }
        let (lo, hi) = self.span;
        if lo < 3 || lo > hi || hi > self.frames {
            return bad(format!("active span range {lo}..={hi} must satisfy 3 <= min <= max <= {}", self.frames));
        }
        if self.brightness.0 <= 0.0 || self.brightness.0 > self.brightness.1 {
            return bad(format!("brightness range {:?}", self.brightness));
        }
        if self.mouth_scale.0 <= 0.0 || self.mouth_scale.0 > self.mouth_scale.1 {
            return bad(format!("mouth scale range {:?}", self.mouth_scale));
        }
        if self.noise < 0.0 || self.jitter < 0.0 {
            return bad("noise and jitter must be nonnegative".into());
        }
        for s in &self.signatures {
            if s.cycles <= 0.0 || !(0.0..=1.0).contains(&s.amplitude) || s.asymmetry <= 0.0 || s.asymmetry >= 1.0 {
                return bad(format!("invalid signature {s:?}"));
            }
        }
        for i in 0..self.classes {
            for j in 0..i {
                let d = self.signatures[i].distance(&self.signatures[j]);
                if d < MIN_SEPARATION {
                    return bad(format!("classes {j} and {i} are only {d:.3} apart (minimum {MIN_SEPARATION})"));
                }
            }
        }
        Ok(())
    }
}

/// One rendered clip.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub video: Video,
    pub label: usize,
    pub seed: u64,
    /// First active frame and span length.
    pub span: (usize, usize),
}

/// Per-clip nuisance draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nuisance {
    pub brightness: f64,
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
}

const BACKGROUND: f64 = 0.7;
const LIPS: f64 = 0.35;
const CAVITY: f64 = 0.05;

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Soft inside-indicator of an ellipse, one pixel wide at the edge.
fn coverage(dx: f64, dy: f64, rx: f64, ry: f64) -> f64 {
    let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    let edge = rx.min(ry).max(0.5);
    ((1.0 - r) * edge + 0.5).clamp(0.0, 1.0)
}

/// Renders one frame at aperture `open ∈ [0, 1]`.
pub fn render_frame(size: usize, open: f64, n: &Nuisance) -> Vec<f64> {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 - 0.5 + n.dx, s / 2.0 - 0.5 + n.dy);
    let rx = 0.3 * s * n.scale;
    let ry_lips = (0.08 + 0.22 * open) * s * n.scale;
    let ry_cavity = 0.2 * s * n.scale * open;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let lips = coverage(dx, dy, rx, ry_lips);
            let cavity = if ry_cavity > 0.0 { coverage(dx, dy, 0.8 * rx, ry_cavity) } else { 0.0 };
            let v = BACKGROUND + lips * (LIPS - BACKGROUND) + cavity * (CAVITY - LIPS);
            out.push(v * n.brightness);
        }
    }
    out
}

/// Deterministic clip for `(label, seed, spec)`.
pub fn render_sequence(label: usize, seed: u64, spec: &SynthSpec) -> Result<SynthSample> {
    if label >= spec.classes {
        return Err(Error::InvalidInput(format!("class {label} out of range for {} classes", spec.classes)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(spec.span.0..=spec.span.1);
    let start = rng.random_range(0..=spec.frames - len);
    let nuisance = Nuisance {
        brightness: uniform(&mut rng, spec.brightness),
        dx: uniform(&mut rng, (-spec.jitter, spec.jitter)),
        dy: uniform(&mut rng, (-spec.jitter, spec.jitter)),
        scale: uniform(&mut rng, spec.mouth_scale),
    };
    let sig = spec.signatures[label];
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("positive sigma"));
    let neutral = render_frame(spec.size, 0.0, &nuisance);
    let mut data = Vec::with_capacity(spec.frames * spec.size * spec.size);
    let mut boundary = vec![0.0; spec.frames];
    for t in 0..spec.frames {
        let active = (start..start + len).contains(&t);
        let frame = if active {
            boundary[t] = 1.0;
            let u = (t - start) as f64 / (len - 1).max(1) as f64;
            render_frame(spec.size, sig.aperture(u), &nuisance)
        } else {
            neutral.clone()
        };
        for v in frame {
            let v = match &noise {
                Some(n) => v + n.sample(&mut rng),
                None => v,
            };
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(SynthSample {
        video: Video::new(spec.frames, spec.size, spec.size, data, boundary)?,
        label,
        seed,
        span: (start, len),
    })
}

/// Per-sample seed: a SplitMix64 finalizer of the master seed and the
/// sample's global index, so distinct indices give distinct seeds.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class sample counts of each split.
pub fn split_counts(per_class: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let train = (per_class as f64 * fractions[0]).round() as usize;
    let val = ((per_class as f64 * fractions[1]).round() as usize).min(per_class - train.min(per_class));
    let train = train.min(per_class);
    Ok([train, val, per_class - train - val])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn all(&self) -> [(&'static str, &Dataset); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Class-balanced train/val/test sets. Sample `i` of class `c` uses the
/// seed of global index `c·per_class + i`; the first indices of each class
/// go to train, then val, then test, so seeds never repeat across splits.
pub fn gen_dataset(spec: &SynthSpec, per_class: usize, fractions: [f64; 3], master_seed: u64) -> Result<Splits> {
    spec.validate()?;
    let counts = split_counts(per_class, fractions)?;
    let mut sets = Vec::with_capacity(3);
    let mut offset = 0;
    for count in counts {
        let mut ds = Dataset::new(spec.frames, spec.size, spec.classes);
        for i in offset..offset + count {
            for class in 0..spec.classes {
                let seed = sample_seed(master_seed, (class * per_class + i) as u64);
                let s = render_sequence(class, seed, spec)?;
                ds.push(&s.video, class)?;
            }
        }
        offset += count;
        sets.push(ds);
    }
    let test = sets.pop().expect("three splits");
    let val = sets.pop().expect("three splits");
    let train = sets.pop().expect("three splits");
    Ok(Splits { train, val, test })
}
