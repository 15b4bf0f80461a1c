mod common;

use infosync_core::datagen::{gen_dataset, render_sequence, sample_seed, split_counts, Signature, SynthSpec};
use infosync_core::dataset::{dequantize, quantize, Dataset, DATASET_MAGIC};
use infosync_core::{Error, Video};
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

fn quiet(classes: usize, frames: usize, size: usize) -> SynthSpec {
    SynthSpec {
        noise: 0.0,
        ..SynthSpec::new(classes, frames, size).unwrap()
    }
}

#[test]
fn static_signature_renders_neutral_frames() {
    let mut spec = quiet(2, 10, 16);
    spec.span = (10, 10);
    spec.signatures[0].amplitude = 0.0;
    let s = render_sequence(0, 77, &spec).unwrap();
    assert_eq!(s.span, (0, 10));
    assert!(s.video.boundary.iter().all(|&b| b == 1.0));
    for t in 1..10 {
        assert_eq!(s.video.frame(t), s.video.frame(0));
    }
}

#[test]
fn rendering_is_deterministic() {
    let spec = SynthSpec::new(10, 29, 20).unwrap();
    for class in [0, 9] {
        assert_eq!(render_sequence(class, 5, &spec).unwrap(), render_sequence(class, 5, &spec).unwrap());
    }
    assert_ne!(render_sequence(3, 5, &spec).unwrap(), render_sequence(3, 6, &spec).unwrap());
    assert!(matches!(render_sequence(10, 5, &spec), Err(Error::InvalidInput(_))));
}

#[test]
fn classes_differ_inside_the_span_only() {
    let spec = quiet(10, 29, 20);
    for seed in 0..5 {
        let a = render_sequence(1, seed, &spec).unwrap();
        for class in [0, 2, 5, 8] {
            let b = render_sequence(class, seed, &spec).unwrap();
            assert_eq!(a.span, b.span);
            let (start, len) = a.span;
            let l2 = |t: usize| -> f64 {
                a.video.frame(t).iter().zip(b.video.frame(t)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            };
            assert!((start..start + len).map(l2).sum::<f64>() > 0.0);
            for t in (0..29).filter(|t| !(start..start + len).contains(t)) {
                assert_eq!(l2(t), 0.0);
            }
        }
    }
}

#[test]
fn inactive_frames_are_the_closed_mouth() {
    let spec = quiet(4, 29, 16);
    for seed in 0..10 {
        let s = render_sequence(seed as usize % 4, seed, &spec).unwrap();
        let (start, len) = s.span;
        let outside: Vec<usize> = (0..29).filter(|t| !(start..start + len).contains(t)).collect();
        for w in outside.windows(2) {
            assert_eq!(s.video.frame(w[0]), s.video.frame(w[1]));
        }
    }
}

#[test]
fn signature_separation_is_enforced() {
    let spec = SynthSpec::new(12, 29, 32).unwrap();
    for i in 0..12 {
        for j in 0..i {
            assert!(spec.signatures[i].distance(&spec.signatures[j]) >= 0.5);
        }
    }
    let mut dup = spec.clone();
    dup.signatures[3] = dup.signatures[1];
    assert!(dup.validate().is_err());
    let mut short = spec.clone();
    short.span = (2, 10);
    assert!(short.validate().is_err());
    let mut long = spec;
    long.span = (5, 30);
    assert!(long.validate().is_err());
}

#[test]
fn signature_aperture_range() {
    for k in 0..10 {
        let s = Signature::lattice(k);
        for i in 0..=100 {
            let a = s.aperture(i as f64 / 100.0);
            assert!((-1e-12..=s.amplitude + 1e-12).contains(&a));
        }
        assert!(s.aperture(0.0).abs() < 1e-12);
    }
}

#[test]
fn desk_splits_are_balanced() {
    assert_eq!(split_counts(200, [0.8, 0.1, 0.1]).unwrap(), [160, 20, 20]);
    assert!(split_counts(10, [0.5, 0.5, 0.5]).is_err());
    let spec = SynthSpec::new(10, 29, 20).unwrap();
    let splits = gen_dataset(&spec, 200, [0.8, 0.1, 0.1], 42).unwrap();
    let lens: Vec<usize> = splits.all().iter().map(|(_, d)| d.len()).collect();
    assert_eq!(lens, vec![1600, 200, 200]);
    for (n, (_, d)) in [160, 20, 20].iter().zip(splits.all()) {
        assert_eq!(d.class_histogram(), vec![*n; 10]);
    }
}

#[test]
fn sample_seeds_never_collide() {
    let mut seen = std::collections::HashSet::new();
    for i in 0..20_000 {
        assert!(seen.insert(sample_seed(42, i)));
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let spec = SynthSpec::new(3, 9, 12).unwrap();
    let a = gen_dataset(&spec, 8, [0.5, 0.25, 0.25], 9).unwrap();
    let b = gen_dataset(&spec, 8, [0.5, 0.25, 0.25], 9).unwrap();
    let c = gen_dataset(&spec, 8, [0.5, 0.25, 0.25], 10).unwrap();
    for ((_, x), (_, y)) in a.all().iter().zip(b.all()) {
        assert_eq!(x.to_bytes(), y.to_bytes());
    }
    assert_ne!(a.train.to_bytes(), c.train.to_bytes());
}

fn mean_frame_features(ds: &Dataset) -> Vec<(Vec<f64>, usize)> {
    (0..ds.len()).map(|i| (ds.video(i).mean_frame(), ds.label(i))).collect()
}

#[test]
fn nearest_centroid_is_above_chance_but_imperfect() {
    let spec = quiet(10, 29, 20);
    let splits = gen_dataset(&spec, 100, [0.5, 0.0, 0.5], 42).unwrap();
    let train = mean_frame_features(&splits.train);
    let dim = train[0].0.len();
    let mut centroids = vec![vec![0.0; dim]; 10];
    let mut counts = vec![0.0; 10];
    for (f, y) in &train {
        counts[*y] += 1.0;
        for (c, v) in centroids[*y].iter_mut().zip(f) {
            *c += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let test = mean_frame_features(&splits.test);
    let correct = test
        .iter()
        .filter(|(f, y)| {
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            infosync_core::loss::argmax(&d.iter().map(|v: &f64| -v).collect::<Vec<_>>()) == *y
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    // One-sided binomial tail against guessing among 10 classes.
    let chance = Binomial::new(0.1, test.len() as u64).unwrap();
    let p = 1.0 - chance.cdf(correct as u64 - 1);
    assert!(p < 0.01 && acc < 1.0, "nearest-centroid accuracy {acc}, p {p}");
}

#[test]
fn file_layout() {
    let spec = SynthSpec::new(2, 3, 8).unwrap();
    let ds = gen_dataset(&spec, 2, [0.5, 0.5, 0.0], 1).unwrap().train;
    let bytes = ds.to_bytes();
    assert_eq!(&bytes[..4], DATASET_MAGIC);
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4)], [1, 2, 3, 8, 2]);
    assert_eq!(bytes.len(), 24 + 2 * (4 + 3 + 3 * 64));
    assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 0);
    assert!(bytes[28..31].iter().all(|&m| m <= 1));
}

#[test]
fn corrupt_files_are_format_errors() {
    let spec = SynthSpec::new(2, 3, 8).unwrap();
    let bytes = gen_dataset(&spec, 2, [0.5, 0.5, 0.0], 1).unwrap().train.to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_label = bytes.clone();
    bad_label[24] = 7;
    let mut trailing = bytes.clone();
    trailing.push(0);
    for b in [bad_magic, bytes[..bytes.len() - 1].to_vec(), bad_label, trailing] {
        assert!(matches!(Dataset::from_bytes(&b), Err(Error::Format(_))));
    }
}

#[test]
fn save_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.isnd");
    let spec = SynthSpec::new(2, 3, 8).unwrap();
    let ds = gen_dataset(&spec, 2, [0.5, 0.5, 0.0], 1).unwrap().train;
    ds.save(&path, false).unwrap();
    assert!(matches!(ds.save(&path, false), Err(Error::Io { .. })));
    ds.save(&path, true).unwrap();
    let loaded = Dataset::load(&path).unwrap();
    assert_eq!(loaded, ds);
    assert_eq!(std::fs::read(&path).unwrap(), loaded.to_bytes());
}

#[test]
fn push_checks_geometry() {
    let mut ds = Dataset::new(3, 8, 2);
    let v = Video::new(3, 6, 6, vec![0.5; 108], vec![0.0; 3]).unwrap();
    assert!(ds.push(&v, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_respect_span_and_range(seed in any::<u64>(), class in 0usize..10) {
        let spec = SynthSpec::new(10, 29, 16).unwrap();
        let s = render_sequence(class, seed, &spec).unwrap();
        let (start, len) = s.span;
        prop_assert!(len >= spec.span.0 && len <= spec.span.1);
        let ones: Vec<usize> = (0..29).filter(|&t| s.video.boundary[t] == 1.0).collect();
        prop_assert_eq!(ones, (start..start + len).collect::<Vec<_>>());
        prop_assert!(s.video.boundary.iter().all(|&b| b == 0.0 || b == 1.0));
        prop_assert!(s.video.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn quantization_round_trip(v in 0.0f64..=1.0) {
        let q = quantize(v);
        prop_assert!((dequantize(q) - v).abs() <= 0.5 / 255.0 + 1e-12);
        prop_assert_eq!(quantize(dequantize(q)), q);
    }

    #[test]
    fn dataset_bytes_round_trip(seed in any::<u64>(), classes in 2usize..4, frames in 1usize..6) {
        let spec = SynthSpec { span: (3.min(frames).max(3), 3), ..SynthSpec::new(classes, frames.max(3), 8).unwrap() };
        let ds = gen_dataset(&spec, 2, [0.5, 0.5, 0.0], seed).unwrap().train;
        let bytes = ds.to_bytes();
        prop_assert_eq!(Dataset::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
}
