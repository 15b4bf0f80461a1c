//! Spatiotemporal front-end: a 3D convolution stem, spatial max pooling,
//! SE-gated residual stages applied per frame and spatial average pooling.

use infosync_tensor::{ConvParams, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm, Conv, Ctx, Layer, SqueezeExcite};
use crate::params::ModelParams;

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub stem_channels: usize,
    pub stem_kernel: [usize; 3],
    pub stem_stride: [usize; 3],
    pub pool_kernel: [usize; 2],
    pub pool_stride: [usize; 2],
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub blocks_per_stage: usize,
    pub se_reduction: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            stem_channels: 16,
            stem_kernel: [5, 7, 7],
            stem_stride: [1, 2, 2],
            pool_kernel: [3, 3],
            pool_stride: [2, 2],
            stage_channels: vec![16, 32, 48, 64],
            stage_strides: vec![1, 2, 2, 2],
            blocks_per_stage: 2,
            se_reduction: 4,
        }
    }
}

impl FrontendConfig {
    /// Width of the per-frame feature vector.
    pub fn output_channels(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("frontend: {msg}")));
        if self.stem_stride[0] != 1 {
            return bad(format!("temporal stem stride must be 1, got {}", self.stem_stride[0]));
        }
        if self.stem_kernel[0].is_multiple_of(2) {
            return bad(format!("temporal stem kernel must be odd, got {}", self.stem_kernel[0]));
        }
        if self.stage_channels.len() != 4 || self.stage_strides.len() != 4 {
            return bad("exactly 4 residual stages are required".into());
        }
        if self.stage_channels.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("stage channels must be nondecreasing: {:?}", self.stage_channels));
        }
        let zero = [self.stem_channels, self.blocks_per_stage, self.se_reduction]
            .iter()
            .chain(&self.stage_channels)
            .chain(&self.stage_strides)
            .chain(&self.stem_kernel)
            .chain(&self.stem_stride)
            .chain(&self.pool_kernel)
            .chain(&self.pool_stride)
            .any(|&v| v == 0);
        if zero {
            return bad("all sizes must be positive".into());
        }
        Ok(())
    }

    /// Spatial extent after stem and pooling for an `s`×`s` frame.
    pub fn stem_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [_, kh, kw] = self.stem_kernel;
        if h < kh || w < kw {
            return Err(Error::InvalidInput(format!(
                "frame {h}x{w} smaller than the {kh}x{kw} stem kernel"
            )));
        }
        let conv = |n: usize, k: usize, s: usize| (n + 2 * (k / 2) - k) / s + 1;
        let pool = |n: usize, k: usize, s: usize| (n + 2 * (k / 2)).saturating_sub(k) / s + 1;
        let (h1, w1) = (conv(h, kh, self.stem_stride[1]), conv(w, kw, self.stem_stride[2]));
        Ok((
            pool(h1, self.pool_kernel[0], self.pool_stride[0]),
            pool(w1, self.pool_kernel[1], self.pool_stride[1]),
        ))
    }
}

/// Two 3×3 convolutions with batch norm, SE after the second, and an
/// identity or 1×1 projection shortcut.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    se: SqueezeExcite,
    shortcut: Option<(Conv, BatchNorm)>,
}

impl BasicBlock {
    pub fn new(path: &str, cin: usize, cout: usize, stride: usize, reduction: usize) -> Self {
        let k3 = |s: usize| ConvParams::new(&[s, s], &[1, 1], &[1, 1]);
        let shortcut = (cin != cout || stride != 1).then(|| {
            (
                Conv::new(join(path, "down.conv"), &[1, 1], cin, cout, ConvParams::new(&[stride, stride], &[0, 0], &[1, 1]), false),
                BatchNorm::new(join(path, "down.bn"), cout),
            )
        });
        BasicBlock {
            conv1: Conv::new(join(path, "conv1"), &[3, 3], cin, cout, k3(stride), false),
            bn1: BatchNorm::new(join(path, "bn1"), cout),
            conv2: Conv::new(join(path, "conv2"), &[3, 3], cout, cout, k3(1), false),
            bn2: BatchNorm::new(join(path, "bn2"), cout),
            se: SqueezeExcite::new(join(path, "se"), cout, reduction, &[1, 2]),
            shortcut,
        }
    }

    pub fn se(&self) -> &SqueezeExcite {
        &self.se
    }
}

impl Layer for BasicBlock {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.conv1.init(params, rng);
        self.bn1.init(params, rng);
        self.conv2.init(params, rng);
        self.bn2.init(params, rng);
        self.se.init(params, rng);
        if let Some((c, b)) = &self.shortcut {
            c.init(params, rng);
            b.init(params, rng);
        }
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(cx, x)?;
        let y = self.bn1.forward(cx, y)?;
        let y = cx.tape.relu(y)?;
        let y = self.conv2.forward(cx, y)?;
        let y = self.bn2.forward(cx, y)?;
        let y = self.se.forward(cx, y)?;
        let skip = match &self.shortcut {
            Some((c, b)) => {
                let s = c.forward(cx, x)?;
                b.forward(cx, s)?
            }
            None => x,
        };
        let y = cx.tape.add(y, skip)?;
        Ok(cx.tape.relu(y)?)
    }
}

#[derive(Clone, Debug)]
pub struct Frontend {
    pub cfg: FrontendConfig,
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
}

impl Frontend {
    pub fn new(path: &str, cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let [kt, kh, kw] = cfg.stem_kernel;
        let stem = Conv::new(
            join(path, "stem.conv"),
            &cfg.stem_kernel,
            1,
            cfg.stem_channels,
            ConvParams::new(&cfg.stem_stride, &[kt / 2, kh / 2, kw / 2], &[1, 1, 1]),
            false,
        );
        let mut blocks = Vec::new();
        let mut cin = cfg.stem_channels;
        for (s, (&cout, &stride)) in cfg.stage_channels.iter().zip(&cfg.stage_strides).enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let path = join(path, &format!("stage{}.block{}", s + 1, b + 1));
                let stride = if b == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(&path, cin, cout, stride, cfg.se_reduction));
                cin = cout;
            }
        }
        Ok(Frontend {
            cfg: cfg.clone(),
            stem_bn: BatchNorm::new(join(path, "stem.bn"), cfg.stem_channels),
            stem,
            blocks,
        })
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.stem.init(params, rng);
        self.stem_bn.init(params, rng);
        for b in &self.blocks {
            b.init(params, rng);
        }
    }

    /// `[N, T, H, W, 1]` video to `[N·T, H1, W1, C1]` pooled stem features.
    pub fn stem3d(&self, cx: &mut Ctx<'_>, video: Var) -> Result<Var> {
        let shape = cx.tape.shape(video).to_vec();
        if shape.len() != 5 || shape[4] != 1 {
            return Err(Error::InvalidInput(format!("expected [N, T, H, W, 1] video, got {shape:?}")));
        }
        self.cfg.stem_spatial(shape[2], shape[3])?;
        let y = self.stem.forward(cx, video)?;
        let y = self.stem_bn.forward(cx, y)?;
        let y = cx.tape.relu(y)?;
        let s = cx.tape.shape(y).to_vec();
        let y = cx.tape.reshape(y, &[s[0] * s[1], s[2], s[3], s[4]])?;
        let [ph, pw] = self.cfg.pool_kernel;
        Ok(cx.tape.max_pool2d(y, self.cfg.pool_kernel, self.cfg.pool_stride, [ph / 2, pw / 2])?)
    }

    /// Final-stage feature maps `[N·T, H2, W2, C2]`.
    pub fn stages(&self, cx: &mut Ctx<'_>, stem: Var) -> Result<Var> {
        let mut x = stem;
        for b in &self.blocks {
            x = b.forward(cx, x)?;
        }
        Ok(x)
    }

    /// `[N, T, H, W, 1]` video to per-frame features `[N, T, C2]`.
    pub fn encode(&self, cx: &mut Ctx<'_>, video: Var) -> Result<Var> {
        let (n, t) = {
            let s = cx.tape.shape(video);
            (s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0))
        };
        let x = self.stem3d(cx, video)?;
        let x = self.stages(cx, x)?;
        let b = cx.tape.mean(x, &[1, 2])?;
        Ok(cx.tape.reshape(b, &[n, t, self.cfg.output_channels()])?)
    }
}
