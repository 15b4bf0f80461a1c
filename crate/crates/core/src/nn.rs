//! Layer plumbing: parameter binding onto a tape and the small building
//! blocks shared by the front-end, attention module and temporal decoder.

use std::collections::HashMap;

use infosync_tensor::{ConvParams, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ModelParams;

/// Batch statistics observed by one batch-norm layer in a training pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub prefix: String,
    pub mean: Tensor,
    /// Biased (population) variance of the batch.
    pub var: Tensor,
    pub count: usize,
}

/// Forward-pass context: the tape being recorded, the parameters bound to
/// it and the train/eval switch.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    params: &'a ModelParams,
    bound: HashMap<String, Var>,
    pub training: bool,
    bn_stats: Vec<BatchStats>,
    dropout_seed: u64,
    dropout_calls: u64,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a ModelParams, training: bool) -> Self {
        Ctx {
            tape,
            params,
            bound: HashMap::new(),
            training,
            bn_stats: Vec::new(),
            dropout_seed: 0,
            dropout_calls: 0,
        }
    }

    /// Seeds the masks of any dropout applied during this pass.
    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.dropout_seed = seed;
        self
    }

    /// Uses `var` for `path` instead of the stored value.
    pub fn bind(&mut self, path: impl Into<String>, var: Var) {
        self.bound.insert(path.into(), var);
    }

    /// Binds `path` lazily: trainable parameters become named tape leaves in
    /// training mode, everything else a constant.
    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let value = self.params.get(path)?.clone();
        let v = if self.training && !self.params.is_buffer(path) {
            self.tape.param(path, value)
        } else {
            self.tape.constant(value)
        };
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn next_dropout_seed(&mut self) -> u64 {
        self.dropout_calls += 1;
        self.dropout_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.dropout_calls)
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.bn_stats)
    }
}

/// Exponential moving update of running statistics, `momentum` weighting
/// the new batch. Variance is stored unbiased.
pub fn apply_batch_stats(params: &mut ModelParams, stats: &[BatchStats], momentum: f64) -> Result<()> {
    for s in stats {
        let correction = if s.count > 1 { s.count as f64 / (s.count as f64 - 1.0) } else { 1.0 };
        let rm = params.get_mut(&format!("{}.running_mean", s.prefix))?;
        for (r, m) in rm.data_mut().iter_mut().zip(s.mean.data()) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let rv = params.get_mut(&format!("{}.running_var", s.prefix))?;
        for (r, v) in rv.data_mut().iter_mut().zip(s.var.data()) {
            *r = (1.0 - momentum) * *r + momentum * v * correction;
        }
    }
    Ok(())
}

/// A component with parameters under a path prefix and a single-input
/// forward map.
pub trait Layer {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng);
    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the trailing axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub path: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(path: impl Into<String>, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            path: path.into(),
            fan_in,
            fan_out,
            bias,
        }
    }
}

impl Layer for Linear {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.fan_in as f64).sqrt();
        params.insert(
            join(&self.path, "weight"),
            Tensor::uniform(vec![self.fan_in, self.fan_out], -bound, bound, rng),
        );
        if self.bias {
            params.insert(join(&self.path, "bias"), Tensor::uniform(vec![self.fan_out], -bound, bound, rng));
        }
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = cx.param(&join(&self.path, "weight"))?;
        let b = if self.bias { Some(cx.param(&join(&self.path, "bias"))?) } else { None };
        Ok(cx.tape.linear(x, w, b)?)
    }
}

/// Convolution over 1, 2 or 3 spatial axes.
#[derive(Clone, Debug)]
pub struct Conv {
    pub path: String,
    pub kernel: Vec<usize>,
    pub cin: usize,
    pub cout: usize,
    pub geometry: ConvParams,
    pub bias: bool,
}

impl Conv {
    pub fn new(path: impl Into<String>, kernel: &[usize], cin: usize, cout: usize, geometry: ConvParams, bias: bool) -> Self {
        Conv {
            path: path.into(),
            kernel: kernel.to_vec(),
            cin,
            cout,
            geometry,
            bias,
        }
    }
}

impl Layer for Conv {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        let fan_in = self.kernel.iter().product::<usize>() * self.cin;
        let mut shape = self.kernel.clone();
        shape.extend([self.cin, self.cout]);
        params.insert(
            join(&self.path, "weight"),
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
        );
        if self.bias {
            params.insert(join(&self.path, "bias"), Tensor::zeros(vec![self.cout]));
        }
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = cx.param(&join(&self.path, "weight"))?;
        let b = if self.bias { Some(cx.param(&join(&self.path, "bias"))?) } else { None };
        let tape = &mut *cx.tape;
        Ok(match self.kernel.len() {
            1 => tape.conv1d(x, w, b, &self.geometry)?,
            2 => tape.conv2d(x, w, b, &self.geometry)?,
            _ => tape.conv3d(x, w, b, &self.geometry)?,
        })
    }
}

/// Batch normalization over all but the channel axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub path: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(path: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            path: path.into(),
            channels,
        }
    }
}

impl Layer for BatchNorm {
    fn init(&self, params: &mut ModelParams, _: &mut ChaCha8Rng) {
        let c = self.channels;
        params.insert(join(&self.path, "gamma"), Tensor::full(vec![c], 1.0));
        params.insert(join(&self.path, "beta"), Tensor::zeros(vec![c]));
        params.insert_buffer(join(&self.path, "running_mean"), Tensor::zeros(vec![c]));
        params.insert_buffer(join(&self.path, "running_var"), Tensor::full(vec![c], 1.0));
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = cx.param(&join(&self.path, "gamma"))?;
        let b = cx.param(&join(&self.path, "beta"))?;
        if cx.training {
            let y = cx.tape.batch_norm(x, g, b, None, true)?;
            let saved = cx.tape.saved(y);
            if saved.len() >= 3 {
                let count = cx.tape.value(x).numel() / self.channels;
                cx.bn_stats.push(BatchStats {
                    prefix: self.path.clone(),
                    mean: saved[1].clone(),
                    var: saved[2].clone(),
                    count,
                });
            }
            Ok(y)
        } else {
            let rm = cx.param(&join(&self.path, "running_mean"))?;
            let rv = cx.param(&join(&self.path, "running_var"))?;
            Ok(cx.tape.batch_norm(x, g, b, Some((rm, rv)), false)?)
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub path: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(path: impl Into<String>, dim: usize) -> Self {
        LayerNorm { path: path.into(), dim }
    }
}

impl Layer for LayerNorm {
    fn init(&self, params: &mut ModelParams, _: &mut ChaCha8Rng) {
        params.insert(join(&self.path, "gamma"), Tensor::full(vec![self.dim], 1.0));
        params.insert(join(&self.path, "beta"), Tensor::zeros(vec![self.dim]));
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = cx.param(&join(&self.path, "gamma"))?;
        let b = cx.param(&join(&self.path, "beta"))?;
        Ok(cx.tape.layer_norm(x, g, b)?)
    }
}

/// Parametric ReLU with one learnable slope, initialised to 0.25.
#[derive(Clone, Debug)]
pub struct Prelu {
    pub path: String,
}

pub const PRELU_INIT: f64 = 0.25;

impl Layer for Prelu {
    fn init(&self, params: &mut ModelParams, _: &mut ChaCha8Rng) {
        params.insert(join(&self.path, "slope"), Tensor::full(vec![1], PRELU_INIT));
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.param(&join(&self.path, "slope"))?;
        Ok(cx.tape.prelu(x, s)?)
    }
}

/// Squeeze-and-excitation: mean over `squeeze_axes`, a bottleneck of
/// width `max(1, C / reduction)`, and a per-channel sigmoid gate.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub path: String,
    pub channels: usize,
    pub squeeze_axes: Vec<usize>,
    fc1: Linear,
    fc2: Linear,
}

impl SqueezeExcite {
    pub fn new(path: impl Into<String>, channels: usize, reduction: usize, squeeze_axes: &[usize]) -> Self {
        let path = path.into();
        let hidden = (channels / reduction.max(1)).max(1);
        SqueezeExcite {
            fc1: Linear::new(join(&path, "fc1"), channels, hidden, true),
            fc2: Linear::new(join(&path, "fc2"), hidden, channels, true),
            path,
            channels,
            squeeze_axes: squeeze_axes.to_vec(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fc1.fan_out
    }

    /// The `[B, C]` gate for input `x`.
    pub fn gate(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.tape.mean(x, &self.squeeze_axes)?;
        let h = self.fc1.forward(cx, s)?;
        let h = cx.tape.relu(h)?;
        let z = self.fc2.forward(cx, h)?;
        Ok(cx.tape.sigmoid(z)?)
    }
}

impl Layer for SqueezeExcite {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.fc1.init(params, rng);
        self.fc2.init(params, rng);
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gate = self.gate(cx, x)?;
        let shape = cx.tape.shape(x).to_vec();
        let mut gshape = vec![1; shape.len()];
        gshape[0] = shape[0];
        gshape[shape.len() - 1] = self.channels;
        let gate = cx.tape.reshape(gate, &gshape)?;
        Ok(cx.tape.mul(x, gate)?)
    }
}

/// Deterministic per-stream RNG derived from a master seed and a stream id.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a fresh 64-bit seed.
pub fn fresh_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.random()
}
