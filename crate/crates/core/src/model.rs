//! Full network: front-end, attention stack, optional word-boundary channel,
//! densely connected temporal decoder and classifier.

use infosync_tensor::Var;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, AttentionStack};
use crate::dctcn::{Dctcn, DctcnConfig};
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig};
use crate::nn::Ctx;
use crate::params::ModelParams;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    pub attention: AttentionConfig,
    pub dctcn: DctcnConfig,
    pub word_boundary: bool,
}

/// Channel widths along the network, checked when the model is built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WidthChain {
    /// `C2`, the per-frame feature width.
    pub features: usize,
    /// Width leaving the attention stack (equal to `C2` when present).
    pub attention: Option<usize>,
    /// Width entering the first transition.
    pub decoder_input: usize,
    /// `(input, output)` width of every dense block.
    pub blocks: Vec<(usize, usize)>,
    /// `C3`, the decoder output width.
    pub decoded: usize,
    pub classes: usize,
}

#[derive(Clone, Debug)]
pub struct InfoSyncNet {
    pub cfg: ModelConfig,
    pub frontend: Frontend,
    pub attention: Option<AttentionStack>,
    pub dctcn: Dctcn,
    pub widths: WidthChain,
}

/// Symbols produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Per-frame features `B: [N, T, C2]`.
    pub features: Var,
    /// Attention output `C: [N, T, C2]` (equal to `features` without attention).
    pub context: Var,
    /// Decoder output `G: [N, T, C3]`.
    pub decoded: Var,
    pub logits: Var,
    /// Attention weights `[N, h, T, T]`, one per layer.
    pub attention: Vec<Var>,
}

impl InfoSyncNet {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        let frontend = Frontend::new("frontend", &cfg.frontend)?;
        let c2 = cfg.frontend.output_channels();
        cfg.attention.validate()?;
        let attention = if cfg.attention.layers > 0 {
            if cfg.attention.d_model != c2 {
                return Err(Error::Architecture(format!(
                    "attention d_model {} differs from front-end width {c2}",
                    cfg.attention.d_model
                )));
            }
            Some(AttentionStack::new("attention", &cfg.attention)?)
        } else {
            None
        };
        if cfg.dctcn.width != c2 {
            return Err(Error::Architecture(format!(
                "transition width {} differs from front-end width {c2}",
                cfg.dctcn.width
            )));
        }
        let decoder_input = c2 + usize::from(cfg.word_boundary);
        let dctcn = Dctcn::new("dctcn", &cfg.dctcn, decoder_input)?;
        let widths = WidthChain {
            features: c2,
            attention: attention.as_ref().map(|a| a.cfg.d_model),
            decoder_input,
            blocks: dctcn.stages.iter().map(|(_, b)| (b.cin(), b.cout())).collect(),
            decoded: dctcn.classifier.fan_in,
            classes: cfg.dctcn.classes,
        };
        check_width_chain(&widths, &cfg.dctcn)?;
        if dctcn.stages[0].0.conv.cin != decoder_input {
            return Err(Error::Architecture("first transition does not absorb the decoder input".into()));
        }
        Ok(InfoSyncNet {
            cfg: cfg.clone(),
            frontend,
            attention,
            dctcn,
            widths,
        })
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        self.frontend.init(&mut params, &mut rng);
        if let Some(a) = &self.attention {
            a.init(&mut params, &mut rng);
        }
        self.dctcn.init(&mut params, &mut rng);
        params
    }

    /// `video: [N, T, H, W, 1]`; `boundary: [N, T, 1]`, required exactly when
    /// the word-boundary channel is enabled.
    pub fn forward(&self, cx: &mut Ctx<'_>, video: Var, boundary: Option<Var>) -> Result<ModelOutput> {
        let features = self.frontend.encode(cx, video)?;
        let (context, attention) = match &self.attention {
            Some(a) => a.forward(cx, features)?,
            None => (features, Vec::new()),
        };
        let input = match (self.cfg.word_boundary, boundary) {
            (true, Some(b)) => {
                let (fs, bs) = (cx.tape.shape(context), cx.tape.shape(b));
                if bs.len() != 3 || bs[..2] != fs[..2] || bs[2] != 1 {
                    return Err(Error::InvalidInput(format!(
                        "boundary mask {bs:?} does not match features {fs:?}"
                    )));
                }
                cx.tape.concat(&[context, b])?
            }
            (false, None) => context,
            (true, None) => return Err(Error::InvalidInput("word boundary enabled but no mask given".into())),
            (false, Some(_)) => return Err(Error::InvalidInput("word boundary disabled but a mask was given".into())),
        };
        let decoded = self.dctcn.stack(cx, input)?;
        let logits = self.dctcn.classify(cx, decoded)?;
        Ok(ModelOutput {
            features,
            context,
            decoded,
            logits,
            attention,
        })
    }
}

/// Every dense block adds `2·C0·layers` channels to its input, every
/// transition restores `C2`, and the decoder emits `C3 = C2 + 2·C0·layers`.
pub fn check_width_chain(w: &WidthChain, cfg: &DctcnConfig) -> Result<()> {
    if let Some(a) = w.attention {
        if a != w.features {
            return Err(Error::Architecture(format!("attention output width {a} != C2 {}", w.features)));
        }
    }
    for (i, &(cin, cout)) in w.blocks.iter().enumerate() {
        if cin != w.features {
            return Err(Error::Architecture(format!("block {} input width {cin} != C2 {}", i + 1, w.features)));
        }
        if cout != cin + cfg.block_growth() {
            return Err(Error::Architecture(format!(
                "block {} output width {cout} != {cin} + {}",
                i + 1,
                cfg.block_growth()
            )));
        }
    }
    let c3 = w.features + cfg.block_growth();
    if w.decoded != c3 {
        return Err(Error::Architecture(format!("C3 {} != C2 + 2*C0*layers = {c3}", w.decoded)));
    }
    Ok(())
}
