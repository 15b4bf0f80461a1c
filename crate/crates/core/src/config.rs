//! Run configuration and its line-oriented `key = value` text format.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::attention::AttentionConfig;
use crate::augment::MaskFill;
use crate::datagen::{Signature, SynthSpec};
use crate::dctcn::DctcnConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::io::read_file;
use crate::model::{InfoSyncNet, ModelConfig};
use crate::optim::{schedule, AdamWConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Optimization and training-strategy settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub schedule: String,
    pub warmup_epochs: f64,
    pub label_smoothing: f64,
    pub mixup_alpha: f64,
    pub use_mixup: bool,
    pub use_time_masking: bool,
    pub time_mask_ratio: f64,
    pub tm_fill: MaskFill,
    pub use_word_boundary: bool,
    pub use_label_smoothing: bool,
    pub use_flip: bool,
    pub use_random_crop: bool,
    pub crop_size: usize,
    pub bn_momentum: f64,
    pub eval_batch_size: usize,
    /// Record elapsed seconds in the metrics log; when off the column is 0
    /// so repeated runs produce identical logs.
    pub log_wall_clock: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 3e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            schedule: "cosine".into(),
            warmup_epochs: 5.0,
            label_smoothing: 0.1,
            mixup_alpha: 0.2,
            use_mixup: true,
            use_time_masking: true,
            time_mask_ratio: 0.4,
            tm_fill: MaskFill::Mean,
            use_word_boundary: true,
            use_label_smoothing: true,
            use_flip: true,
            use_random_crop: true,
            crop_size: 28,
            bn_momentum: 0.1,
            eval_batch_size: 32,
            log_wall_clock: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Smoothing actually applied to targets.
    pub fn epsilon(&self) -> f64 {
        if self.use_label_smoothing {
            self.label_smoothing
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("train: {msg}")));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("epochs and batch sizes must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return bad(format!("lr {} / weight decay {}", self.lr, self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and eps positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.mixup_alpha <= 0.0 {
            return bad(format!("mixup alpha {} must be positive", self.mixup_alpha));
        }
        if !(self.time_mask_ratio > 0.0 && self.time_mask_ratio <= 1.0) {
            return bad(format!("time mask ratio {} outside (0, 1]", self.time_mask_ratio));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.warmup_epochs < 0.0 {
            return bad("bn momentum must be in [0, 1] and warmup nonnegative".into());
        }
        schedule(&self.schedule, self.warmup_epochs)?;
        Ok(())
    }
}

/// Synthetic data generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub frames: usize,
    pub size: usize,
    pub brightness: (f64, f64),
    pub jitter: f64,
    pub mouth_scale: (f64, f64),
    pub noise: f64,
    pub span: (usize, usize),
    pub per_class: usize,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let spec = SynthSpec::new(10, 29, 32).expect("default spec is valid");
        DataConfig {
            classes: spec.classes,
            frames: spec.frames,
            size: spec.size,
            brightness: spec.brightness,
            jitter: spec.jitter,
            mouth_scale: spec.mouth_scale,
            noise: spec.noise,
            span: spec.span,
            per_class: 200,
            fractions: [0.8, 0.1, 0.1],
            seed: 42,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> Result<SynthSpec> {
        let spec = SynthSpec {
            classes: self.classes,
            frames: self.frames,
            size: self.size,
            signatures: (0..self.classes).map(Signature::lattice).collect(),
            brightness: self.brightness,
            jitter: self.jitter,
            mouth_scale: self.mouth_scale,
            noise: self.noise,
            span: self.span,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub attention: AttentionConfig,
    pub dctcn: DctcnConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}


type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&RunConfig) -> String;

fn num<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    s.parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

fn flag(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{s:?} is not true or false")),
    }
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',').map(|p| num(p.trim())).collect()
}

fn fixed<T: FromStr + Copy + Default, const N: usize>(s: &str) -> std::result::Result<[T; N], String>
where
    T::Err: Display,
{
    let v = list::<T>(s)?;
    let mut out = [T::default(); N];
    if v.len() != N {
        return Err(format!("expected {N} comma-separated values, got {}", v.len()));
    }
    out.copy_from_slice(&v);
    Ok(out)
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! fields {
    ($($key:literal => $($path:ident).+ : $kind:ident),* $(,)?) => {
        &[$(($key,
            (|c: &mut RunConfig, s: &str| { c.$($path).+ = fields!(@parse $kind, s)?; Ok(()) }) as Setter,
            (|c: &RunConfig| fields!(@emit $kind, &c.$($path).+)) as Getter,
        )),*]
    };
    (@parse scalar, $s:expr) => { num($s) };
    (@parse flag, $s:expr) => { flag($s) };
    (@parse list, $s:expr) => { list($s) };
    (@parse fixed, $s:expr) => { fixed($s) };
    (@parse pair, $s:expr) => { fixed::<_, 2>($s).map(|[a, b]| (a, b)) };
    (@parse fill, $s:expr) => { MaskFill::parse($s).ok_or_else(|| format!("{:?} is not mean or zeros", $s)) };
    (@parse text, $s:expr) => { Ok::<String, String>($s.to_string()) };
    (@emit scalar, $v:expr) => { $v.to_string() };
    (@emit flag, $v:expr) => { $v.to_string() };
    (@emit list, $v:expr) => { join($v) };
    (@emit fixed, $v:expr) => { join($v) };
    (@emit pair, $v:expr) => { join(&[$v.0, $v.1]) };
    (@emit fill, $v:expr) => { $v.name().to_string() };
    (@emit text, $v:expr) => { $v.clone() };
}

const FIELDS: &[(&str, Setter, Getter)] = fields! {
    "frontend.stem_channels" => frontend.stem_channels: scalar,
    "frontend.stem_kernel" => frontend.stem_kernel: fixed,
    "frontend.stem_stride" => frontend.stem_stride: fixed,
    "frontend.pool_kernel" => frontend.pool_kernel: fixed,
    "frontend.pool_stride" => frontend.pool_stride: fixed,
    "frontend.stage_channels" => frontend.stage_channels: list,
    "frontend.stage_strides" => frontend.stage_strides: list,
    "frontend.blocks_per_stage" => frontend.blocks_per_stage: scalar,
    "frontend.se_reduction" => frontend.se_reduction: scalar,
    "attention.layers" => attention.layers: scalar,
    "attention.heads" => attention.heads: scalar,
    "attention.d_model" => attention.d_model: scalar,
    "attention.d_ff" => attention.d_ff: scalar,
    "attention.positional_encoding" => attention.positional_encoding: flag,
    "attention.dropout" => attention.dropout: scalar,
    "dctcn.blocks" => dctcn.blocks: scalar,
    "dctcn.layers_per_block" => dctcn.layers_per_block: scalar,
    "dctcn.growth" => dctcn.growth: scalar,
    "dctcn.width" => dctcn.width: scalar,
    "dctcn.kernels" => dctcn.kernels: fixed,
    "dctcn.dilations" => dctcn.dilations: list,
    "dctcn.se_reduction" => dctcn.se_reduction: scalar,
    "train.epochs" => train.epochs: scalar,
    "train.batch_size" => train.batch_size: scalar,
    "train.lr" => train.lr: scalar,
    "train.weight_decay" => train.weight_decay: scalar,
    "train.beta1" => train.beta1: scalar,
    "train.beta2" => train.beta2: scalar,
    "train.adam_eps" => train.adam_eps: scalar,
    "train.schedule" => train.schedule: text,
    "train.warmup_epochs" => train.warmup_epochs: scalar,
    "train.label_smoothing" => train.label_smoothing: scalar,
    "train.mixup_alpha" => train.mixup_alpha: scalar,
    "train.use_mixup" => train.use_mixup: flag,
    "train.use_time_masking" => train.use_time_masking: flag,
    "train.time_mask_ratio" => train.time_mask_ratio: scalar,
    "train.tm_fill" => train.tm_fill: fill,
    "train.use_word_boundary" => train.use_word_boundary: flag,
    "train.use_label_smoothing" => train.use_label_smoothing: flag,
    "train.use_flip" => train.use_flip: flag,
    "train.use_random_crop" => train.use_random_crop: flag,
    "train.crop_size" => train.crop_size: scalar,
    "train.bn_momentum" => train.bn_momentum: scalar,
    "train.eval_batch_size" => train.eval_batch_size: scalar,
    "train.log_wall_clock" => train.log_wall_clock: flag,
    "train.seed" => train.seed: scalar,
    "data.classes" => data.classes: scalar,
    "data.frames" => data.frames: scalar,
    "data.size" => data.size: scalar,
    "data.brightness" => data.brightness: pair,
    "data.jitter" => data.jitter: scalar,
    "data.mouth_scale" => data.mouth_scale: pair,
    "data.noise" => data.noise: scalar,
    "data.span" => data.span: pair,
    "data.per_class" => data.per_class: scalar,
    "data.fractions" => data.fractions: fixed,
    "data.seed" => data.seed: scalar,
};

impl RunConfig {
    /// Every recognised key, in emission order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.0)
    }

    /// Parses the text format. Every key is optional (defaults fill the
    /// rest); unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ConfigParse { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            if key == "version" {
                let v: u32 = num(value).map_err(err)?;
                if v != CONFIG_VERSION {
                    return Err(err(format!("unsupported config version {v}")));
                }
                continue;
            }
            let (_, set, _) = FIELDS
                .iter()
                .find(|f| f.0 == key)
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            set(&mut cfg, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Full text form with every key, parseable by [`RunConfig::parse`].
    pub fn emit(&self) -> String {
        let mut out = format!("version = {CONFIG_VERSION}\n");
        for (key, _, get) in FIELDS {
            out.push_str(&format!("{key} = {}\n", get(self)));
        }
        out
    }

    pub fn model(&self) -> ModelConfig {
        let mut dctcn = self.dctcn.clone();
        dctcn.classes = self.data.classes;
        ModelConfig {
            frontend: self.frontend.clone(),
            attention: self.attention.clone(),
            dctcn,
            word_boundary: self.train.use_word_boundary,
        }
    }

    pub fn build_model(&self) -> Result<InfoSyncNet> {
        InfoSyncNet::build(&self.model())
    }

    /// Checks every section and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.spec()?;
        self.build_model()?;
        if self.train.crop_size > self.data.size {
            return Err(Error::Config(format!(
                "crop size {} exceeds frame size {}",
                self.train.crop_size, self.data.size
            )));
        }
        self.frontend.stem_spatial(self.train.crop_size, self.train.crop_size)?;
        crate::datagen::split_counts(self.data.per_class, self.data.fractions)?;
        Ok(())
    }

    /// Lines of `self.emit()` that differ from `other.emit()`.
    pub fn diff(&self, other: &RunConfig) -> Vec<(String, String)> {
        self.emit()
            .lines()
            .zip(other.emit().lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }
}
