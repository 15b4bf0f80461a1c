//! Verification suites, registered by name and runnable from the CLI:
//! gradient checks, shape contracts, oracle comparisons and determinism.

use std::collections::BTreeMap;
use std::sync::Arc;

use infosync_tensor::{
    conv::conv_forward, conv_oracle, grad_check, grad_check_graph, standard_registry, ConvGeometry, GradCheck,
    OpRegistry, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, AttentionStack};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::datagen::{gen_dataset, SynthSpec};
use crate::dctcn::{Dctcn, DctcnConfig};
use crate::error::Result;
use crate::frontend::{Frontend, FrontendConfig};
use crate::loss::{cross_entropy, smoothed_targets};
use crate::model::{InfoSyncNet, ModelConfig};
use crate::nn::Ctx;
use crate::params::ModelParams;

/// Finite-difference step used by every gradient check here.
pub const GRAD_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Random seeds per gradient check.
pub const GRAD_SEEDS: u64 = 10;

/// Gradient check of a parameterized forward map with respect to its input
/// and every trainable parameter, in training mode.
pub fn module_grad_check<F>(params: &ModelParams, input: Tensor, step: f64, forward: F) -> GradCheck
where
    F: Fn(&mut Ctx<'_>, Var) -> Result<Var>,
{
    let paths: Vec<String> = params.trainable().map(|(p, _)| p.to_string()).collect();
    let mut inputs = vec![input];
    inputs.extend(params.trainable().map(|(_, t)| t.clone()));
    grad_check_graph(
        |tape: &mut Tape, vars: &[Var]| {
            let mut cx = Ctx::new(tape, params, true);
            for (p, &v) in paths.iter().zip(&vars[1..]) {
                cx.bind(p.clone(), v);
            }
            forward(&mut cx, vars[0]).map_err(|e| match e {
                crate::Error::Tensor(t) => t,
                other => infosync_tensor::TensorError::shape("module", other.to_string()),
            })
        },
        &inputs,
        step,
    )
}

/// Front-end small enough for exhaustive finite differences.
pub fn tiny_frontend() -> FrontendConfig {
    FrontendConfig {
        stem_channels: 2,
        stage_channels: vec![2, 2, 4, 4],
        blocks_per_stage: 1,
        se_reduction: 2,
        ..FrontendConfig::default()
    }
}

pub fn tiny_attention() -> AttentionConfig {
    AttentionConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ff: 32,
        positional_encoding: false,
        dropout: 0.0,
    }
}

pub fn tiny_dctcn() -> DctcnConfig {
    DctcnConfig {
        blocks: 2,
        growth: 2,
        width: 8,
        se_reduction: 4,
        ..DctcnConfig::default()
    }
}

fn params_of(init: impl FnOnce(&mut ModelParams, &mut ChaCha8Rng), seed: u64) -> ModelParams {
    let mut params = ModelParams::new();
    init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
    params
}

/// Worst gradient check of the tiny front-end on a 3-frame 16×16 clip.
pub fn frontend_grad_check(seed: u64) -> Result<GradCheck> {
    let fe = Frontend::new("fe", &tiny_frontend())?;
    let params = params_of(|p, r| fe.init(p, r), seed);
    let x = Tensor::uniform(vec![1, 3, 16, 16, 1], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xF00D));
    Ok(module_grad_check(&params, x, GRAD_STEP, |cx, v| fe.encode(cx, v)))
}

/// Attention stack with `L = 2`, `T = 4`, `d_model = 8`, `h = 2`.
pub fn attention_grad_check(seed: u64) -> Result<GradCheck> {
    let stack = AttentionStack::new("attn", &tiny_attention())?;
    let params = params_of(|p, r| stack.init(p, r), seed);
    let x = Tensor::randn(vec![2, 4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xA77));
    Ok(module_grad_check(&params, x, GRAD_STEP, |cx, v| Ok(stack.forward(cx, v)?.0)))
}

/// Two-block decoder with `T = 4`, `C2 = 8`, `C0 = 2`.
pub fn dctcn_grad_check(seed: u64) -> Result<GradCheck> {
    let dec = Dctcn::new("dec", &tiny_dctcn(), 8)?;
    let params = params_of(|p, r| dec.init(p, r), seed);
    let x = Tensor::randn(vec![2, 4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xDC));
    Ok(module_grad_check(&params, x, GRAD_STEP, |cx, v| dec.stack(cx, v)))
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(name, passed, detail),
            Err(e) => Check::new(name, false, format!("error: {e}")),
        }
    }
}

/// Shared inputs of the suites: the operator inventory under test.
pub struct VerifyEnv {
    pub registry: Arc<OpRegistry>,
}

impl Default for VerifyEnv {
    fn default() -> Self {
        VerifyEnv {
            registry: standard_registry(),
        }
    }
}

pub trait Suite: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, env: &VerifyEnv) -> Vec<Check>;
}

fn worst_over_seeds(run: impl Fn(u64) -> Result<GradCheck>) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        worst = worst.max(run(seed)?.max_rel_error);
    }
    Ok((worst < GRAD_TOLERANCE, format!("max relative error {worst:.3e}")))
}

/// Every registered operator plus three composite stacks.
pub struct GradSuite;

impl Suite for GradSuite {
    fn name(&self) -> &'static str {
        "grad"
    }

    fn run(&self, env: &VerifyEnv) -> Vec<Check> {
        let mut checks: Vec<Check> = env
            .registry
            .names()
            .map(|name| {
                let op = env.registry.get(name).expect("listed operator");
                Check::from_result(
                    name,
                    worst_over_seeds(|seed| {
                        let f = op.fixture(&mut ChaCha8Rng::seed_from_u64(seed));
                        Ok(grad_check(op.as_ref(), &f.inputs, &f.attrs, &f.differentiable, GRAD_STEP))
                    }),
                )
            })
            .collect();
        checks.push(Check::from_result("frontend-tiny", worst_over_seeds(frontend_grad_check)));
        checks.push(Check::from_result("attention-L2", worst_over_seeds(attention_grad_check)));
        checks.push(Check::from_result("dctcn-2block", worst_over_seeds(dctcn_grad_check)));
        checks
    }
}

fn shape_of(net: &InfoSyncNet, t: usize, s: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> {
    let params = net.init_params(seed);
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &params, false);
    let v = cx.input(Tensor::uniform(vec![1, t, s, s, 1], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let b = net.cfg.word_boundary.then(|| cx.input(Tensor::full(vec![1, t, 1], 1.0)));
    let out = net.forward(&mut cx, v, b)?;
    let f = |v| tape.shape(v).to_vec();
    Ok((f(out.features), f(out.context), f(out.decoded), f(out.logits)))
}

/// Shape and width contracts of the desk-scale model.
pub struct ShapesSuite;

impl Suite for ShapesSuite {
    fn name(&self) -> &'static str {
        "shapes"
    }

    fn run(&self, _: &VerifyEnv) -> Vec<Check> {
        let mut checks = Vec::new();
        let cfg = ModelConfig {
            word_boundary: true,
            ..ModelConfig::default()
        };
        checks.push(Check::from_result(
            "width-chain",
            InfoSyncNet::build(&cfg).map(|net| {
                let w = &net.widths;
                let ok = w.features == 64
                    && w.attention == Some(64)
                    && w.blocks.iter().all(|&(i, o)| i == 64 && o == 160)
                    && w.decoded == 160;
                (ok, format!("{w:?}"))
            }),
        ));
        let mut broken = cfg.clone();
        broken.dctcn.width = 48;
        checks.push(Check::new(
            "width-mismatch-rejected",
            InfoSyncNet::build(&broken).is_err(),
            "decoder width differing from C2 must fail the build",
        ));
        checks.push(Check::from_result(
            "stem-29x8x8x16",
            (|| {
                let fe = Frontend::new("frontend", &FrontendConfig::default())?;
                let params = params_of(|p, r| fe.init(p, r), 0);
                let mut tape = Tape::new();
                let mut cx = Ctx::new(&mut tape, &params, false);
                let v = cx.input(Tensor::zeros(vec![1, 29, 32, 32, 1]));
                let y = fe.stem3d(&mut cx, v)?;
                let s = tape.shape(y).to_vec();
                Ok((s == [29, 8, 8, 16], format!("{s:?}")))
            })(),
        ));
        for t in [1, 5, 29] {
            checks.push(Check::from_result(
                &format!("model-T{t}"),
                InfoSyncNet::build(&cfg).and_then(|net| {
                    let (b, c, g, z) = shape_of(&net, t, 32, t as u64)?;
                    let ok = b == [1, t, 64] && c == [1, t, 64] && g == [1, t, 160] && z == [1, 10];
                    Ok((ok, format!("B {b:?} C {c:?} G {g:?} logits {z:?}")))
                }),
            ));
        }
        checks
    }
}

/// Production kernels and closed forms against independent evaluations.
pub struct OracleSuite;

impl Suite for OracleSuite {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn run(&self, _: &VerifyEnv) -> Vec<Check> {
        let mut checks = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        let mut failure = None;
        for _ in 0..20 {
            let mut g = ConvGeometry {
                batch: rng.random_range(1..=2),
                input: [1; 3],
                cin: rng.random_range(1..=3),
                kernel: [1; 3],
                cout: rng.random_range(1..=3),
                stride: [1; 3],
                pad: [0; 3],
                dilation: [1; 3],
            };
            for a in rng.random_range(0..3)..3 {
                g.kernel[a] = rng.random_range(1..=3);
                g.dilation[a] = rng.random_range(1..=3);
                g.stride[a] = rng.random_range(1..=2);
                g.pad[a] = rng.random_range(0..=3);
                let span = g.dilation[a] * (g.kernel[a] - 1) + 1;
                g.input[a] = span.saturating_sub(2 * g.pad[a]).max(1) + rng.random_range(0..=4);
            }
            let n_in = g.batch * g.input.iter().product::<usize>() * g.cin;
            let n_w = g.kernel.iter().product::<usize>() * g.cin * g.cout;
            let x = Tensor::randn(vec![n_in], 1.0, &mut rng);
            let w = Tensor::randn(vec![n_w], 1.0, &mut rng);
            match (conv_forward(&g, x.data(), w.data(), None), conv_oracle(&g, x.data(), w.data(), None)) {
                (Ok(a), Ok(b)) => {
                    worst = worst.max(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
                }
                (Err(a), Err(b)) if a == b => {}
                (a, b) => failure = Some(format!("{g:?}: production {:?} vs oracle {:?}", a.err(), b.err())),
            }
        }
        checks.push(match failure {
            Some(f) => Check::new("conv-vs-direct-loop", false, f),
            None => Check::new("conv-vs-direct-loop", worst < 1e-10, format!("max abs difference {worst:.3e}")),
        });
        checks.push(Check::from_result(
            "smoothed-targets",
            smoothed_targets(0, 4, 0.95).map(|q| {
                let expect = [0.2875, 0.2375, 0.2375, 0.2375];
                let err = q.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (err < 1e-12, format!("{q:?}"))
            }),
        ));
        checks.push(Check::from_result(
            "uniform-cross-entropy",
            smoothed_targets(3, 10, 0.0)
                .and_then(|q| cross_entropy(&[0.0; 10], &q))
                .map(|l| ((l - 10f64.ln()).abs() < 1e-12, format!("{l}"))),
        ));
        checks
    }
}

/// Repeated runs and serialization round trips are bit-identical.
pub struct DeterminismSuite;

impl Suite for DeterminismSuite {
    fn name(&self) -> &'static str {
        "determinism"
    }

    fn run(&self, _: &VerifyEnv) -> Vec<Check> {
        let mut checks = Vec::new();
        checks.push(Check::from_result(
            "forward-backward",
            (|| {
                let net = InfoSyncNet::build(&ModelConfig {
                    frontend: tiny_frontend(),
                    attention: AttentionConfig { d_model: 4, d_ff: 16, ..tiny_attention() },
                    dctcn: DctcnConfig { width: 4, classes: 3, ..tiny_dctcn() },
                    word_boundary: true,
                })?;
                let params = net.init_params(7);
                let run = || -> Result<(Vec<f64>, BTreeMap<String, Tensor>)> {
                    let mut tape = Tape::new();
                    let mut cx = Ctx::new(&mut tape, &params, true);
                    let v = cx.input(Tensor::uniform(vec![2, 5, 16, 16, 1], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
                    let b = cx.input(Tensor::full(vec![2, 5, 1], 1.0));
                    let out = net.forward(&mut cx, v, Some(b))?;
                    let loss = cx.tape.sum_all(out.logits)?;
                    let logits = tape.value(out.logits).data().to_vec();
                    Ok((logits, tape.backward(loss)?.by_path))
                };
                let (a, b) = (run()?, run()?);
                Ok((a == b, format!("{} gradient entries", a.1.len())))
            })(),
        ));
        checks.push(Check::from_result(
            "dataset-regeneration",
            (|| {
                let spec = SynthSpec::new(3, 8, 16)?;
                let a = gen_dataset(&spec, 4, [0.5, 0.25, 0.25], 11)?;
                let b = gen_dataset(&spec, 4, [0.5, 0.25, 0.25], 11)?;
                let same = a.all().iter().zip(b.all()).all(|((_, x), (_, y))| x.to_bytes() == y.to_bytes());
                let round = a.train.to_bytes() == crate::dataset::Dataset::from_bytes(&a.train.to_bytes())?.to_bytes();
                Ok((same && round, "byte-identical files and round trip".to_string()))
            })(),
        ));
        checks.push(Check::from_result(
            "checkpoint-round-trip",
            (|| {
                let cfg = RunConfig::default();
                let net = cfg.build_model()?;
                let ck = Checkpoint::from_params(&net.init_params(5), &cfg);
                let bytes = ck.to_bytes()?;
                let again = Checkpoint::from_bytes(&bytes)?.to_bytes()?;
                Ok((bytes == again, format!("{} bytes", bytes.len())))
            })(),
        ));
        checks
    }
}

/// Name-keyed collection of suites.
pub struct SuiteRegistry {
    suites: BTreeMap<&'static str, Arc<dyn Suite>>,
}

impl SuiteRegistry {
    pub fn standard() -> Self {
        let mut r = SuiteRegistry { suites: BTreeMap::new() };
        r.register(Arc::new(GradSuite));
        r.register(Arc::new(ShapesSuite));
        r.register(Arc::new(OracleSuite));
        r.register(Arc::new(DeterminismSuite));
        r
    }

    pub fn register(&mut self, suite: Arc<dyn Suite>) {
        self.suites.insert(suite.name(), suite);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.suites.keys().copied()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Suite>> {
        self.suites.get(name)
    }

    /// Runs one suite, or every suite for `"all"`.
    pub fn run(&self, name: &str, env: &VerifyEnv) -> Option<Report> {
        let selected: Vec<&Arc<dyn Suite>> = if name == "all" {
            self.suites.values().collect()
        } else {
            vec![self.suites.get(name)?]
        };
        Some(Report {
            suites: selected.into_iter().map(|s| (s.name(), s.run(env))).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub suites: Vec<(&'static str, Vec<Check>)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|(_, c)| c.iter().all(|c| c.passed))
    }

    /// One `suite: passed/total pass` line per suite, each preceded by a
    /// `FAIL suite/check: detail` line for every failing check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, checks) in &self.suites {
            for c in checks.iter().filter(|c| !c.passed) {
                out.push_str(&format!("FAIL {name}/{}: {}\n", c.name, c.detail));
            }
            let ok = checks.iter().filter(|c| c.passed).count();
            out.push_str(&format!("{name}: {ok}/{} pass\n", checks.len()));
        }
        out
    }
}
