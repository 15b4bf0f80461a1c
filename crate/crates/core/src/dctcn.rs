//! Densely connected temporal convolutional decoder: transition layers
//! alternating with SE-gated dense blocks, then temporal pooling and a
//! linear classifier.

use infosync_tensor::{ConvParams, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm, Conv, Ctx, Layer, Linear, Prelu, SqueezeExcite};
use crate::params::ModelParams;

#[derive(Clone, Debug, PartialEq)]
pub struct DctcnConfig {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth: usize,
    pub width: usize,
    pub kernels: [usize; 2],
    pub dilations: Vec<usize>,
    pub classes: usize,
    pub se_reduction: usize,
}

impl Default for DctcnConfig {
    fn default() -> Self {
        DctcnConfig {
            blocks: 4,
            layers_per_block: 3,
            growth: 16,
            width: 64,
            kernels: [3, 5],
            dilations: vec![1, 2, 4],
            classes: 10,
            se_reduction: 4,
        }
    }
}

impl DctcnConfig {
    /// Width added by one dense block.
    pub fn block_growth(&self) -> usize {
        2 * self.growth * self.layers_per_block
    }

    /// Output width of every dense block, `C2 + 2·C0·layers`.
    pub fn output_width(&self) -> usize {
        self.width + self.block_growth()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("dctcn: {msg}")));
        if self.blocks == 0 || self.layers_per_block == 0 || self.growth == 0 || self.width == 0 {
            return bad("blocks, layers, growth and width must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("at least 2 classes are required, got {}", self.classes));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!("branch kernels must be odd for same-length padding: {:?}", self.kernels));
        }
        if self.dilations.len() != self.layers_per_block || self.dilations.contains(&0) {
            return bad(format!(
                "need {} positive dilations, got {:?}",
                self.layers_per_block, self.dilations
            ));
        }
        if self.se_reduction == 0 {
            return bad("SE reduction must be positive".into());
        }
        Ok(())
    }
}

/// `prelu(BN(Conv1d_k1(x)))`, resetting the channel width.
#[derive(Clone, Debug)]
pub struct Transition {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Prelu,
}

impl Transition {
    pub fn new(path: &str, cin: usize, cout: usize) -> Self {
        Transition {
            conv: Conv::new(join(path, "conv"), &[1], cin, cout, ConvParams::new(&[1], &[0], &[1]), false),
            bn: BatchNorm::new(join(path, "bn"), cout),
            act: Prelu { path: join(path, "act") },
        }
    }
}

impl Layer for Transition {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.conv.init(params, rng);
        self.bn.init(params, rng);
        self.act.init(params, rng);
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        self.act.forward(cx, y)
    }
}

/// `TC(SE(x))`: temporal SE gate, then dilated same-length Conv1d, BN and
/// prelu emitting the growth width.
#[derive(Clone, Debug)]
pub struct TcBranch {
    pub se: SqueezeExcite,
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Prelu,
}

impl TcBranch {
    pub fn new(path: &str, cin: usize, cout: usize, kernel: usize, dilation: usize, reduction: usize) -> Self {
        TcBranch {
            se: SqueezeExcite::new(join(path, "se"), cin, reduction, &[1]),
            conv: Conv::new(join(path, "conv"), &[kernel], cin, cout, ConvParams::same(&[kernel], &[dilation]), false),
            bn: BatchNorm::new(join(path, "bn"), cout),
            act: Prelu { path: join(path, "act") },
        }
    }
}

impl Layer for TcBranch {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.se.init(params, rng);
        self.conv.init(params, rng);
        self.bn.init(params, rng);
        self.act.init(params, rng);
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.se.forward(cx, x)?;
        let y = self.conv.forward(cx, y)?;
        let y = self.bn.forward(cx, y)?;
        self.act.forward(cx, y)
    }
}

/// `concat(TC_a(SE_a(x)), TC_b(SE_b(x)), x)` on the channel axis.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub branches: [TcBranch; 2],
    pub cin: usize,
}

impl DenseLayer {
    pub fn new(path: &str, cin: usize, cfg: &DctcnConfig, dilation: usize) -> Self {
        let branch = |i: usize| {
            TcBranch::new(
                &join(path, &format!("branch{}", i + 1)),
                cin,
                cfg.growth,
                cfg.kernels[i],
                dilation,
                cfg.se_reduction,
            )
        };
        DenseLayer {
            branches: [branch(0), branch(1)],
            cin,
        }
    }

    pub fn cout(&self) -> usize {
        self.cin + self.branches.iter().map(|b| b.conv.cout).sum::<usize>()
    }
}

impl Layer for DenseLayer {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for b in &self.branches {
            b.init(params, rng);
        }
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let a = self.branches[0].forward(cx, x)?;
        let b = self.branches[1].forward(cx, x)?;
        Ok(cx.tape.concat(&[a, b, x])?)
    }
}

#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(path: &str, cin: usize, cfg: &DctcnConfig) -> Self {
        let mut width = cin;
        let layers = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let l = DenseLayer::new(&join(path, &format!("layer{}", i + 1)), width, cfg, d);
                width = l.cout();
                l
            })
            .collect();
        DenseBlock { layers }
    }

    pub fn cin(&self) -> usize {
        self.layers[0].cin
    }

    pub fn cout(&self) -> usize {
        self.layers.last().map(DenseLayer::cout).unwrap_or(0)
    }
}

impl Layer for DenseBlock {
    fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut x = x;
        for l in &self.layers {
            x = l.forward(cx, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct Dctcn {
    pub cfg: DctcnConfig,
    pub stages: Vec<(Transition, DenseBlock)>,
    pub classifier: Linear,
}

impl Dctcn {
    /// `input_width` is the feature width entering the first transition
    /// (`C2`, or `C2 + 1` with the word-boundary channel).
    pub fn new(path: &str, cfg: &DctcnConfig, input_width: usize) -> Result<Self> {
        cfg.validate()?;
        let mut cin = input_width;
        let mut stages = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let tr = Transition::new(&join(path, &format!("transition{}", b + 1)), cin, cfg.width);
            let block = DenseBlock::new(&join(path, &format!("block{}", b + 1)), cfg.width, cfg);
            cin = block.cout();
            stages.push((tr, block));
        }
        Ok(Dctcn {
            classifier: Linear::new(join(path, "classifier"), cin, cfg.classes, true),
            cfg: cfg.clone(),
            stages,
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for (t, b) in &self.stages {
            t.init(params, rng);
            b.init(params, rng);
        }
        self.classifier.init(params, rng);
    }

    /// `[N, T, Cin]` to `G: [N, T, C3]`.
    pub fn stack(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut x = x;
        for (t, b) in &self.stages {
            x = t.forward(cx, x)?;
            x = b.forward(cx, x)?;
        }
        Ok(x)
    }

    /// Temporal mean of `G` followed by the linear classifier: `[N, C4]`.
    pub fn classify(&self, cx: &mut Ctx<'_>, g: Var) -> Result<Var> {
        let h = cx.tape.mean(g, &[1])?;
        self.classifier.forward(cx, h)
    }
}
