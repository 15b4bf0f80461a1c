//! AdamW with decoupled weight decay, and learning-rate schedules selected
//! by name.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use infosync_tensor::{Gradients, Tensor};

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    steps: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable parameter that has a gradient:
    /// `θ ← θ - lr·wd·θ - lr·m̂ / (√v̂ + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (path, g) in &grads.by_path {
            if params.is_buffer(path) {
                continue;
            }
            let theta = params.get_mut(path)?;
            check_shape(path, theta, g)?;
            let n = theta.numel();
            let st = self.state.entry(path.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if st.m.len() != n {
                return Err(Error::InvalidInput(format!(
                    "optimizer state for {path} has {} entries, parameter has {n}",
                    st.m.len()
                )));
            }
            for (((p, &gi), m), v) in theta.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * weight_decay * *p + lr * update;
            }
        }
        Ok(())
    }
}

fn check_shape(path: &str, theta: &Tensor, g: &Tensor) -> Result<()> {
    if theta.shape() != g.shape() {
        return Err(Error::InvalidInput(format!(
            "gradient for {path} has shape {:?}, parameter {:?}",
            g.shape(),
            theta.shape()
        )));
    }
    Ok(())
}

/// Position in training, with `epoch` counted from zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub step: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
}

impl Progress {
    /// Fractional epochs completed once the current step has run.
    pub fn epochs_done(&self) -> f64 {
        self.epoch as f64 + (self.step + 1) as f64 / self.steps_per_epoch.max(1) as f64
    }
}

pub trait LrSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn lr(&self, base: f64, at: Progress) -> f64;
}

/// The same rate throughout.
pub struct Constant;

impl LrSchedule for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn lr(&self, base: f64, _: Progress) -> f64 {
        base
    }
}

/// Linear warmup over `warmup` epochs, then cosine decay to zero at the end
/// of training.
pub struct Cosine {
    pub warmup: f64,
}

impl LrSchedule for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn lr(&self, base: f64, at: Progress) -> f64 {
        let done = at.epochs_done();
        let total = at.epochs as f64;
        let warmup = self.warmup.min(total);
        if done <= warmup && warmup > 0.0 {
            return base * done / warmup;
        }
        let span = (total - warmup).max(f64::MIN_POSITIVE);
        let frac = ((done - warmup) / span).clamp(0.0, 1.0);
        0.5 * base * (1.0 + (PI * frac).cos())
    }
}

pub const SCHEDULES: [&str; 2] = ["constant", "cosine"];

/// Looks a schedule up by name.
pub fn schedule(name: &str, warmup_epochs: f64) -> Result<Arc<dyn LrSchedule>> {
    match name {
        "constant" => Ok(Arc::new(Constant)),
        "cosine" => Ok(Arc::new(Cosine { warmup: warmup_epochs })),
        other => Err(Error::Config(format!(
            "unknown schedule {other:?}, expected one of {}",
            SCHEDULES.join(", ")
        ))),
    }
}
