mod common;

use common::{max_abs, permute_rows, rng, set, zero_where};
use infosync_core::attention::{EncoderLayer, Mhsa};
use infosync_core::verify::{module_grad_check, tiny_attention, GRAD_STEP, GRAD_TOLERANCE};
use infosync_core::{key_frame_scores, AttentionConfig, AttentionStack, AttentionTrace, Ctx, Error, ModelParams};
use infosync_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn stack(cfg: &AttentionConfig, seed: u64) -> (AttentionStack, ModelParams) {
    let s = AttentionStack::new("attn", cfg).unwrap();
    let mut params = ModelParams::new();
    s.init(&mut params, &mut rng(seed));
    (s, params)
}

/// Output and trace of clip 0.
fn forward(s: &AttentionStack, params: &ModelParams, x: Tensor) -> (Tensor, AttentionTrace) {
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, params, false);
    let v = cx.input(x);
    let (y, w) = s.forward(&mut cx, v).unwrap();
    let ws: Vec<&Tensor> = w.iter().map(|&w| tape.value(w)).collect();
    let trace = AttentionTrace::from_weights(&ws, 0).unwrap();
    (tape.value(y).clone(), trace)
}

fn small(layers: usize) -> AttentionConfig {
    AttentionConfig {
        layers,
        ..tiny_attention()
    }
}

#[test]
fn single_frame_attends_to_itself() {
    let (s, params) = stack(&small(2), 1);
    let (_, trace) = forward(&s, &params, Tensor::randn(vec![1, 1, 8], 1.0, &mut rng(2)));
    for layer in &trace.heads {
        for m in layer {
            assert_eq!(m, &vec![1.0]);
        }
    }
}

#[test]
fn identical_frames_attend_uniformly() {
    let (s, params) = stack(&small(3), 3);
    let frame = Tensor::randn(vec![8], 1.0, &mut rng(4));
    let x = Tensor::new(vec![1, 5, 8], frame.data().repeat(5)).unwrap();
    let (_, trace) = forward(&s, &params, x);
    for layer in &trace.heads {
        for m in layer {
            assert!(m.iter().all(|v| (v - 0.2).abs() < 1e-12), "{m:?}");
        }
    }
}

#[test]
fn attention_weights_match_direct_evaluation() {
    let mhsa = Mhsa::new("m", 2, 1);
    let mut params = ModelParams::new();
    mhsa.init(&mut params, &mut rng(5));
    set(&mut params, "m.q.weight", &[1.0, 0.0, 0.0, 1.0]);
    set(&mut params, "m.q.bias", &[0.0, 0.0]);
    set(&mut params, "m.k.weight", &[2.0, 0.0, 0.0, 2.0]);
    let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let x = Tensor::new(vec![1, 3, 2], rows.concat()).unwrap();
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &params, false);
    let v = cx.input(x);
    let (_, w) = mhsa.forward(&mut cx, v).unwrap();
    let got = tape.value(w).data().to_vec();
    let mut expect = Vec::new();
    for q in &rows {
        let logits: Vec<f64> = rows
            .iter()
            .map(|k| 2.0 * (q[0] * k[0] + q[1] * k[1]) / 2f64.sqrt())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        expect.extend(logits.iter().map(|l| l.exp() / z));
    }
    assert!(max_abs(&got, &expect) < 1e-12);
    for row in got.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zeroed_branches_give_identity() {
    for layers in [1, 6] {
        let cfg = AttentionConfig {
            layers,
            ..AttentionConfig::default()
        };
        let (s, mut params) = stack(&cfg, 6);
        zero_where(&mut params, |p| p.contains(".attn.") || p.contains(".mlp."));
        let x = Tensor::randn(vec![2, 7, 64], 1.0, &mut rng(7));
        let (y, _) = forward(&s, &params, x.clone());
        assert!(y.max_abs_diff(&x) <= 1e-12);
    }
}

#[test]
fn encoder_layer_preserves_shape() {
    let layer = EncoderLayer::new("l", &AttentionConfig::default());
    let mut params = ModelParams::new();
    layer.init(&mut params, &mut rng(8));
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &params, false);
    let v = cx.input(Tensor::randn(vec![1, 29, 64], 1.0, &mut rng(9)));
    let (y, w) = layer.forward(&mut cx, v).unwrap();
    assert_eq!(tape.shape(y), &[1, 29, 64]);
    assert_eq!(tape.shape(w), &[1, 4, 29, 29]);
}

#[test]
fn desk_stack_traces_every_layer_and_head() {
    let (s, params) = stack(&AttentionConfig::default(), 10);
    let (y, trace) = forward(&s, &params, Tensor::randn(vec![1, 29, 64], 1.0, &mut rng(11)));
    assert_eq!(y.shape(), &[1, 29, 64]);
    assert_eq!(trace.layers(), 6);
    assert!(trace.heads.iter().all(|l| l.len() == 4 && l.iter().all(|m| m.len() == 29 * 29)));
    assert_eq!(trace.mean.len(), 6);
}

#[test]
fn config_validation() {
    let bad_heads = AttentionConfig {
        heads: 3,
        ..AttentionConfig::default()
    };
    assert!(bad_heads.validate().is_err());
    assert!(AttentionStack::new("a", &small(0)).is_err());
    assert_eq!(AttentionConfig::default().d_k(), 16);
}

#[test]
fn key_frame_scores_of_simple_traces() {
    let t = 4;
    let uniform = AttentionTrace {
        frames: t,
        heads: vec![vec![vec![0.25; 16]]],
        mean: vec![vec![0.25; 16]],
    };
    assert_eq!(key_frame_scores(&uniform, 1).unwrap(), vec![0.25; 4]);
    let mut one = vec![0.0; 16];
    for r in 0..t {
        one[r * t + 2] = 1.0;
    }
    let focused = AttentionTrace {
        frames: t,
        heads: vec![vec![one.clone()]],
        mean: vec![one],
    };
    assert_eq!(key_frame_scores(&focused, 1).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    for layer in [0, 2] {
        assert!(matches!(
            key_frame_scores(&focused, layer),
            Err(Error::LayerOutOfRange { layers: 1, .. })
        ));
    }
}

#[test]
fn positions_break_permutation_equivariance() {
    let cfg = AttentionConfig {
        positional_encoding: true,
        ..small(2)
    };
    let (s, params) = stack(&cfg, 12);
    let x = Tensor::randn(vec![1, 4, 8], 1.0, &mut rng(13));
    let perm = [2, 0, 3, 1];
    let (y, _) = forward(&s, &params, x.clone());
    let (yp, _) = forward(&s, &params, permute_rows(&x, &perm));
    assert!(permute_rows(&y, &perm).max_abs_diff(&yp) > 1e-6);
}

#[test]
fn single_layer_gradients_match_finite_differences() {
    let layer = EncoderLayer::new("l", &tiny_attention());
    let mut params = ModelParams::new();
    layer.init(&mut params, &mut rng(14));
    let x = Tensor::randn(vec![1, 4, 8], 1.0, &mut rng(15));
    let g = module_grad_check(&params, x, GRAD_STEP, |cx, v| Ok(layer.forward(cx, v)?.0));
    assert!(g.max_rel_error < GRAD_TOLERANCE, "{}", g.max_rel_error);
}

fn frames() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 4, 29])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), t in frames(), scale in 0.1f64..10.0) {
        let (s, params) = stack(&small(2), seed);
        let (_, trace) = forward(&s, &params, Tensor::randn(vec![1, t, 8], scale, &mut rng(seed ^ 3)));
        for m in trace.heads.iter().flatten().chain(&trace.mean) {
            for row in m.chunks(t) {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn stack_is_permutation_equivariant(seed in any::<u64>(), t in frames()) {
        let (s, params) = stack(&small(2), seed);
        let x = Tensor::randn(vec![1, t, 8], 1.0, &mut rng(seed ^ 5));
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut rng(seed ^ 7));
        let (y, trace) = forward(&s, &params, x.clone());
        let (yp, trace_p) = forward(&s, &params, permute_rows(&x, &perm));
        prop_assert!(permute_rows(&y, &perm).max_abs_diff(&yp) < 1e-10);
        for (l, heads) in trace.heads.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                let mp = &trace_p.heads[l][h];
                for i in 0..t {
                    for j in 0..t {
                        prop_assert!((mp[i * t + j] - m[perm[i] * t + perm[j]]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_branch_identity_random_shapes(seed in any::<u64>(), t in frames(), layers in 1usize..4) {
        let (s, mut params) = stack(&small(layers), seed);
        zero_where(&mut params, |p| p.contains(".attn.") || p.contains(".mlp."));
        let x = Tensor::randn(vec![2, t, 8], 3.0, &mut rng(seed ^ 9));
        let (y, _) = forward(&s, &params, x.clone());
        prop_assert!(y.max_abs_diff(&x) <= 1e-12);
    }
}
