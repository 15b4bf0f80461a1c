mod common;

use std::collections::BTreeMap;

use common::{max_abs, rng};
use infosync_core::augment::{
    center_crop, crop, default_max_span, eval_view, flip, mask_span, mixup, random_crop, sample_lambda,
    spatial_augment, time_mask, MaskFill, SpatialAugment,
};
use infosync_core::loss::{argmax, cross_entropy, entropy, smoothed_targets};
use infosync_core::optim::{schedule, AdamW, AdamWConfig, Progress};
use infosync_core::{ModelParams, Video};
use infosync_tensor::{Gradients, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn clip(frames: usize, size: usize, seed: u64) -> Video {
    let data = Tensor::uniform(vec![frames * size * size], 0.0, 1.0, &mut rng(seed)).into_data();
    let boundary = (0..frames).map(|t| f64::from(u8::from(t % 3 == 1))).collect();
    Video::new(frames, size, size, data, boundary).unwrap()
}

#[test]
fn smoothing_examples() {
    assert_eq!(smoothed_targets(2, 5, 0.0).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    let q = smoothed_targets(0, 4, 0.95).unwrap();
    assert!(max_abs(&q, &[0.2875, 0.2375, 0.2375, 0.2375]) < 1e-12);
    assert!(smoothed_targets(4, 4, 0.1).is_err());
    assert!(smoothed_targets(0, 4, 1.0).is_err());
}

#[test]
fn smoothed_targets_sum_to_one_over_grid() {
    for n in 2..=1000 {
        for eps in [0.0, 0.05, 0.5, 0.95] {
            for y in [0, n / 2, n - 1] {
                let q = smoothed_targets(y, n, eps).unwrap();
                assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "n={n} eps={eps}");
                if eps > 0.0 {
                    assert!(q.iter().all(|&v| v > 0.0));
                }
            }
        }
    }
}

#[test]
fn cross_entropy_closed_forms() {
    let one_hot = smoothed_targets(3, 10, 0.0).unwrap();
    assert!((cross_entropy(&[0.0; 10], &one_hot).unwrap() - 10f64.ln()).abs() < 1e-12);
    let uniform = vec![0.1; 10];
    let at_uniform = cross_entropy(&[1.5; 10], &uniform).unwrap();
    assert!((at_uniform - 10f64.ln()).abs() < 1e-12);
    let mut z = [1.5; 10];
    z[4] += 0.3;
    assert!(cross_entropy(&z, &uniform).unwrap() > at_uniform);
    assert!(cross_entropy(&[f64::NAN, 0.0], &[0.5, 0.5]).is_err());
    assert!(cross_entropy(&[0.0, 0.0], &[1.0]).is_err());
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_target() {
    let mut r = rng(1);
    for _ in 0..10 {
        let z = Tensor::randn(vec![1, 7], 2.0, &mut r);
        let q = smoothed_targets(r.random_range(0..7), 7, 0.3).unwrap();
        let lse = z.data().iter().map(|v| v.exp()).sum::<f64>().ln();
        let expect: Vec<f64> = z.data().iter().zip(&q).map(|(v, qi)| (v - lse).exp() - qi).collect();

        let h = 1e-5;
        let fd: Vec<f64> = (0..7)
            .map(|i| {
                let mut up = z.data().to_vec();
                let mut down = z.data().to_vec();
                up[i] += h;
                down[i] -= h;
                (cross_entropy(&up, &q).unwrap() - cross_entropy(&down, &q).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(max_abs(&fd, &expect) < 1e-6);

        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone(), true);
        let qv = tape.constant(Tensor::new(vec![1, 7], q.clone()).unwrap());
        let loss = tape.cross_entropy(zv, qv).unwrap();
        assert!((tape.value(loss).item() - cross_entropy(z.data(), &q).unwrap()).abs() < 1e-12);
        tape.backward(loss).unwrap();
        assert!(max_abs(tape.grad(zv).unwrap().data(), &expect) < 1e-12);
    }
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0; 5]), 0);
}

#[test]
fn mixup_examples() {
    let a = clip(4, 5, 2);
    let b = clip(4, 5, 3);
    assert_eq!(mixup(&a, &b, 1.0).unwrap(), a);
    let zeros = Video::new(2, 3, 3, vec![0.0; 18], vec![0.0, 1.0]).unwrap();
    let twos = Video::new(2, 3, 3, vec![2.0; 18], vec![1.0, 1.0]).unwrap();
    let m = mixup(&zeros, &twos, 0.5).unwrap();
    assert!(m.data.iter().all(|&v| v == 1.0));
    assert_eq!(m.boundary, vec![0.5, 1.0]);
    assert!(mixup(&a, &clip(3, 5, 4), 0.5).is_err());
    assert!(mixup(&a, &b, 1.5).is_err());
}

#[test]
fn mixup_weight_has_mean_one_half() {
    let mut r = rng(5);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_lambda(0.2, &mut r).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
    assert!(sample_lambda(0.0, &mut r).is_err());
}

#[test]
fn zero_fill_masks_exactly_the_span() {
    let v = clip(8, 4, 6);
    let m = mask_span(&v, 3, 3, MaskFill::Zeros).unwrap();
    for t in 0..8 {
        if (3..6).contains(&t) {
            assert!(m.frame(t).iter().all(|&x| x == 0.0));
        } else {
            assert_eq!(m.frame(t), v.frame(t));
        }
    }
    assert_eq!(m.boundary, v.boundary);
}

#[test]
fn mean_fill_of_constant_clip_is_identity() {
    let v = Video::new(6, 3, 3, vec![0.375; 54], vec![1.0; 6]).unwrap();
    let mut r = rng(7);
    for _ in 0..20 {
        assert_eq!(time_mask(&v, 4, MaskFill::Mean, &mut r).unwrap().0, v);
    }
}

#[test]
fn time_mask_rejects_bad_spans() {
    let v = clip(5, 2, 8);
    assert!(time_mask(&v, 0, MaskFill::Zeros, &mut rng(0)).is_err());
    assert!(time_mask(&v, 6, MaskFill::Zeros, &mut rng(0)).is_err());
    assert_eq!(default_max_span(29, 0.4), 12);
    assert_eq!(default_max_span(2, 0.1), 1);
}

#[test]
fn masked_length_is_uniform() {
    let v = clip(29, 2, 9);
    let max_span = 12;
    let draws = 10_000;
    let mut counts = vec![0usize; max_span];
    let mut r = rng(10);
    for _ in 0..draws {
        let (_, _, len) = time_mask(&v, max_span, MaskFill::Zeros, &mut r).unwrap();
        counts[len - 1] += 1;
    }
    let expected = draws as f64 / max_span as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((max_span - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}, counts {counts:?}");
}

/// Left half dark, one bright pixel per frame at a frame-dependent spot.
fn asymmetric(frames: usize, size: usize) -> Video {
    let mut data = vec![0.0; frames * size * size];
    for t in 0..frames {
        for y in 0..size {
            for x in 0..size {
                data[(t * size + y) * size + x] = if x < size / 2 { 0.1 } else { 0.6 };
            }
        }
        data[(t * size + t) * size + (t + 1)] = 1.0;
    }
    Video::new(frames, size, size, data, vec![0.0; frames]).unwrap()
}

#[test]
fn flip_mirrors_probe_pixels() {
    let v = asymmetric(3, 6);
    let f = flip(&v);
    for (t, y, x) in [(0, 0, 1), (1, 1, 2), (2, 4, 0)] {
        assert_eq!(f.pixel(t, y, x), v.pixel(t, y, 5 - x));
    }
    assert_eq!(f.pixel(1, 1, 3), 1.0);
    assert_eq!(flip(&f), v);
}

#[test]
fn crop_geometry() {
    let v = clip(3, 8, 11);
    assert_eq!(center_crop(&v, 8).unwrap(), v);
    assert!(center_crop(&v, 9).is_err());
    assert!(random_crop(&v, 9, &mut rng(0)).is_err());
    let c = crop(&v, 2, 1, 4).unwrap();
    assert_eq!(c.pixel(2, 0, 0), v.pixel(2, 2, 1));
    assert_eq!(c.pixel(1, 3, 3), v.pixel(1, 5, 4));
    assert_eq!(center_crop(&v, 4).unwrap(), crop(&v, 2, 2, 4).unwrap());
}

#[test]
fn spatial_augment_treats_all_frames_alike() {
    let frame = Tensor::uniform(vec![100], 0.0, 1.0, &mut rng(12)).into_data();
    let v = Video::new(5, 10, 10, frame.repeat(5), vec![1.0; 5]).unwrap();
    let cfg = SpatialAugment {
        crop_size: 7,
        random_crop: true,
        flip: true,
    };
    let mut r = rng(13);
    let mut outcomes = std::collections::BTreeSet::new();
    for _ in 0..40 {
        let a = spatial_augment(&v, &cfg, &mut r).unwrap();
        assert_eq!((a.height, a.width), (7, 7));
        for t in 1..5 {
            assert_eq!(a.frame(t), a.frame(0));
        }
        outcomes.insert(a.frame(0).iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
    assert!(outcomes.len() > 4);
    assert_eq!(eval_view(&v, 7).unwrap(), center_crop(&v, 7).unwrap());
}

fn scalar_params(value: f64) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert("w", Tensor::new(vec![1], vec![value]).unwrap());
    p
}

fn grad(g: f64) -> Gradients {
    Gradients {
        by_path: BTreeMap::from([("w".to_string(), Tensor::new(vec![1], vec![g]).unwrap())]),
    }
}

#[test]
fn adamw_two_step_hand_trace() {
    let cfg = AdamWConfig {
        weight_decay: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = AdamW::new(cfg);
    let mut p = scalar_params(1.0);
    let lr = 0.1;

    // m1 = 0.05, v1 = 0.00025, m̂ = 0.5, v̂ = 0.25
    opt.step(&mut p, &grad(0.5), lr).unwrap();
    let theta1 = 1.0 - lr * 0.01 * 1.0 - lr * 0.5 / (0.5 + 1e-8);
    assert!((p.get("w").unwrap().data()[0] - theta1).abs() < 1e-12);

    // m2 = 0.045 - 0.025 = 0.02, v2 = 0.00024975 + 0.0000625
    opt.step(&mut p, &grad(-0.25), lr).unwrap();
    let m_hat = 0.02 / (1.0 - 0.81);
    let v_hat: f64 = (0.000_249_75 + 0.000_062_5) / (1.0 - 0.998_001);
    let theta2 = theta1 - lr * 0.01 * theta1 - lr * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((p.get("w").unwrap().data()[0] - theta2).abs() < 1e-12);
    assert_eq!(opt.steps(), 2);
}

#[test]
fn adamw_step_size_approaches_lr() {
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut p = scalar_params(0.0);
    let lr = 1e-3;
    let mut last = 0.0;
    for _ in 0..500 {
        last = p.get("w").unwrap().data()[0];
        opt.step(&mut p, &grad(3.7), lr).unwrap();
    }
    let step = (p.get("w").unwrap().data()[0] - last).abs();
    assert!((step - lr).abs() < 0.01 * lr, "{step}");
}

#[test]
fn adamw_zero_gradient_decays_exponentially() {
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut p = scalar_params(2.0);
    let (lr, wd) = (0.05, 0.01);
    let mut expect = 2.0;
    for _ in 0..10 {
        opt.step(&mut p, &grad(0.0), lr).unwrap();
        expect *= 1.0 - lr * wd;
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-15);
    }
}

#[test]
fn adamw_skips_buffers_and_rejects_shape_mismatch() {
    let mut p = scalar_params(1.0);
    p.insert_buffer("stat", Tensor::new(vec![1], vec![4.0]).unwrap());
    let mut g = grad(1.0);
    g.by_path.insert("stat".into(), Tensor::new(vec![1], vec![1.0]).unwrap());
    let mut opt = AdamW::new(AdamWConfig::default());
    opt.step(&mut p, &g, 0.1).unwrap();
    assert_eq!(p.get("stat").unwrap().data(), &[4.0]);
    let bad = Gradients {
        by_path: BTreeMap::from([("w".to_string(), Tensor::zeros(vec![2]))]),
    };
    assert!(opt.step(&mut p, &bad, 0.1).is_err());
}

#[test]
fn schedules() {
    let at = |epoch, step| Progress {
        epoch,
        step,
        steps_per_epoch: 10,
        epochs: 30,
    };
    let cosine = schedule("cosine", 5.0).unwrap();
    assert!((cosine.lr(1.0, at(0, 4)) - 0.1).abs() < 1e-12);
    assert!((cosine.lr(1.0, at(4, 9)) - 1.0).abs() < 1e-12);
    assert!((cosine.lr(1.0, at(17, 4)) - 0.5).abs() < 1e-12);
    assert!(cosine.lr(1.0, at(29, 9)).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for e in 5..30 {
        let lr = cosine.lr(1.0, at(e, 0));
        assert!(lr < prev);
        prev = lr;
    }
    let constant = schedule("constant", 5.0).unwrap();
    assert_eq!(constant.lr(0.3, at(12, 3)), 0.3);
    assert!(schedule("step", 0.0).is_err());
}

proptest! {
    #[test]
    fn cross_entropy_bounded_below_by_entropy(
        logits in prop::collection::vec(-30.0f64..30.0, 2..12),
        label in any::<prop::sample::Index>(),
        eps in 0.0f64..0.99,
    ) {
        let n = logits.len();
        let q = smoothed_targets(label.index(n), n, eps).unwrap();
        prop_assert!(cross_entropy(&logits, &q).unwrap() >= entropy(&q) - 1e-9);
    }

    #[test]
    fn mixup_stays_between_sources(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let (a, b) = (clip(3, 4, seed), clip(3, 4, seed ^ 1));
        let m = mixup(&a, &b, lambda).unwrap();
        for ((x, p), q) in m.data.iter().zip(&a.data).zip(&b.data) {
            prop_assert!(*x >= p.min(*q) && *x <= p.max(*q));
        }
        for ((x, p), q) in m.boundary.iter().zip(&a.boundary).zip(&b.boundary) {
            prop_assert!((x - (lambda * p + (1.0 - lambda) * q)).abs() < 1e-15);
        }
    }

    #[test]
    fn time_mask_touches_only_its_span(seed in any::<u64>(), frames in 1usize..30, zeros in any::<bool>()) {
        let v = clip(frames, 3, seed);
        let fill = if zeros { MaskFill::Zeros } else { MaskFill::Mean };
        let max_span = default_max_span(frames, 0.4);
        let (m, start, len) = time_mask(&v, max_span, fill, &mut rng(seed ^ 2)).unwrap();
        prop_assert!((1..=max_span).contains(&len) && start + len <= frames);
        let mean = v.mean_frame();
        for t in 0..frames {
            if (start..start + len).contains(&t) {
                let expect: &[f64] = if zeros { &[0.0; 9] } else { &mean };
                prop_assert_eq!(m.frame(t), expect);
            } else {
                prop_assert_eq!(m.frame(t), v.frame(t));
            }
        }
        prop_assert_eq!(&m.boundary, &v.boundary);
    }
}
