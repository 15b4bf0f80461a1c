//! Pre-norm Transformer encoder stack that re-weights frames, with capture
//! of the per-head attention matrices.

use infosync_tensor::{Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{join, Ctx, Layer, LayerNorm, Linear};
use crate::params::ModelParams;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub positional_encoding: bool,
    pub dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            layers: 6,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            positional_encoding: false,
            dropout: 0.0,
        }
    }
}

impl AttentionConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    /// `layers == 0` is accepted and means the stack is absent.
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Ok(());
        }
        if self.heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("attention: heads, d_model and d_ff must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "attention: d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("attention: dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Multi-head self-attention over `[N, T, D]`. The key projection has no
/// bias: a key bias adds the same logit to every key of a query row and
/// cancels in the softmax.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub heads: usize,
    pub d_model: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Mhsa {
    pub fn new(path: &str, d_model: usize, heads: usize) -> Self {
        Mhsa {
            heads,
            d_model,
            q: Linear::new(join(path, "q"), d_model, d_model, true),
            k: Linear::new(join(path, "k"), d_model, d_model, false),
            v: Linear::new(join(path, "v"), d_model, d_model, true),
            out: Linear::new(join(path, "out"), d_model, d_model, false),
        }
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.init(params, rng);
        }
    }

    fn split(&self, cx: &mut Ctx<'_>, x: Var, n: usize, t: usize) -> Result<Var> {
        let dk = self.d_model / self.heads;
        let x = cx.tape.reshape(x, &[n, t, self.heads, dk])?;
        Ok(cx.tape.permute(x, &[0, 2, 1, 3])?)
    }

    /// Returns the output `[N, T, D]` and the attention weights `[N, h, T, T]`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<(Var, Var)> {
        let shape = cx.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(Error::Architecture(format!(
                "attention expects [N, T, {}] input, got {shape:?}",
                self.d_model
            )));
        }
        let (n, t) = (shape[0], shape[1]);
        let q = self.q.forward(cx, x)?;
        let q = self.split(cx, q, n, t)?;
        let k = self.k.forward(cx, x)?;
        let k = self.split(cx, k, n, t)?;
        let v = self.v.forward(cx, x)?;
        let v = self.split(cx, v, n, t)?;
        let logits = cx.tape.matmul(q, k, false, true)?;
        let logits = cx.tape.scale(logits, 1.0 / ((self.d_model / self.heads) as f64).sqrt())?;
        let weights = cx.tape.softmax(logits)?;
        let heads = cx.tape.matmul(weights, v, false, false)?;
        let heads = cx.tape.permute(heads, &[0, 2, 1, 3])?;
        let concat = cx.tape.reshape(heads, &[n, t, self.d_model])?;
        Ok((self.out.forward(cx, concat)?, weights))
    }
}

/// `B' = B + MHSA(LN(B))`, then `B' + MLP(LN(B'))` with a ReLU MLP.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: Mhsa,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(path: &str, cfg: &AttentionConfig) -> Self {
        EncoderLayer {
            norm1: LayerNorm::new(join(path, "ln1"), cfg.d_model),
            attn: Mhsa::new(&join(path, "attn"), cfg.d_model, cfg.heads),
            norm2: LayerNorm::new(join(path, "ln2"), cfg.d_model),
            fc1: Linear::new(join(path, "mlp.fc1"), cfg.d_model, cfg.d_ff, true),
            fc2: Linear::new(join(path, "mlp.fc2"), cfg.d_ff, cfg.d_model, true),
            dropout: cfg.dropout,
        }
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.norm1.init(params, rng);
        self.attn.init(params, rng);
        self.norm2.init(params, rng);
        self.fc1.init(params, rng);
        self.fc2.init(params, rng);
    }

    fn drop(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if cx.training && self.dropout > 0.0 {
            let seed = cx.next_dropout_seed();
            Ok(cx.tape.dropout(x, self.dropout, seed)?)
        } else {
            Ok(x)
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<(Var, Var)> {
        let z = self.norm1.forward(cx, x)?;
        let (a, weights) = self.attn.forward(cx, z)?;
        let a = self.drop(cx, a)?;
        let x = cx.tape.add(x, a)?;
        let z = self.norm2.forward(cx, x)?;
        let h = self.fc1.forward(cx, z)?;
        let h = cx.tape.relu(h)?;
        let m = self.fc2.forward(cx, h)?;
        let m = self.drop(cx, m)?;
        Ok((cx.tape.add(x, m)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionStack {
    pub cfg: AttentionConfig,
    pub layers: Vec<EncoderLayer>,
}

impl AttentionStack {
    pub fn new(path: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.layers == 0 {
            return Err(Error::Config("attention: at least one layer is required".into()));
        }
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer::new(&join(path, &format!("layer{}", l + 1)), cfg))
            .collect();
        Ok(AttentionStack { cfg: cfg.clone(), layers })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    /// Applies every layer; returns the output and each layer's attention
    /// weights `[N, h, T, T]`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut x = x;
        if self.cfg.positional_encoding {
            let shape = cx.tape.shape(x).to_vec();
            let pe = cx.tape.constant(sinusoidal_encoding(shape[1], shape[2]));
            x = cx.tape.add(x, pe)?;
        }
        let mut weights = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, w) = l.forward(cx, x)?;
            weights.push(w);
            x = y;
        }
        Ok((x, weights))
    }
}

/// Sinusoidal position table `[T, D]`.
pub fn sinusoidal_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let rate = 10000f64.powf(-((2 * (i / 2)) as f64) / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t, d], data).expect("positive extents")
}

/// Attention matrices of one clip: `heads[l][h]` is the `T×T` row-stochastic
/// matrix of head `h` at layer `l + 1`, `mean[l]` their average.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub frames: usize,
    pub heads: Vec<Vec<Vec<f64>>>,
    pub mean: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// Extracts clip `sample` from per-layer `[N, h, T, T]` weight tensors.
    pub fn from_weights(weights: &[&Tensor], sample: usize) -> Result<Self> {
        let mut heads = Vec::with_capacity(weights.len());
        let mut mean = Vec::with_capacity(weights.len());
        let mut frames = 0;
        for w in weights {
            let s = w.shape();
            if s.len() != 4 || s[2] != s[3] || sample >= s[0] {
                return Err(Error::InvalidInput(format!(
                    "attention weights {s:?} do not hold clip {sample}"
                )));
            }
            let (h, t) = (s[1], s[2]);
            frames = t;
            let base = sample * h * t * t;
            let layer: Vec<Vec<f64>> = (0..h)
                .map(|i| w.data()[base + i * t * t..base + (i + 1) * t * t].to_vec())
                .collect();
            let mut avg = vec![0.0; t * t];
            for m in &layer {
                for (a, v) in avg.iter_mut().zip(m) {
                    *a += v;
                }
            }
            avg.iter_mut().for_each(|a| *a /= h as f64);
            heads.push(layer);
            mean.push(avg);
        }
        Ok(AttentionTrace { frames, heads, mean })
    }

    pub fn layers(&self) -> usize {
        self.mean.len()
    }

    /// Column sums of the head-averaged matrix at `layer` (1-based),
    /// normalized to sum to one.
    pub fn key_frame_scores(&self, layer: usize) -> Result<Vec<f64>> {
        key_frame_scores(self, layer)
    }
}

pub fn key_frame_scores(trace: &AttentionTrace, layer: usize) -> Result<Vec<f64>> {
    if layer == 0 || layer > trace.layers() {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: trace.layers(),
        });
    }
    let t = trace.frames;
    let m = &trace.mean[layer - 1];
    let mut scores = vec![0.0; t];
    for row in m.chunks_exact(t) {
        for (s, v) in scores.iter_mut().zip(row) {
            *s += v;
        }
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|s| *s /= total);
    }
    Ok(scores)
}
