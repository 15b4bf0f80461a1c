mod common;

use std::path::{Path, PathBuf};

use common::rng;
use infosync_core::augment::MaskFill;
use infosync_core::checkpoint::CHECKPOINT_MAGIC;
use infosync_core::heatmap::{attention_trace, export_heatmaps, matrix_csv, matrix_pgm, round_row, scores_csv};
use infosync_core::verify::{tiny_attention, tiny_dctcn, tiny_frontend};
use infosync_core::{AttentionConfig, AttentionTrace, Checkpoint, DctcnConfig, Error, RunConfig, Video};
use infosync_tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(rel: &str) -> RunConfig {
    RunConfig::load(&configs_dir().join(rel)).unwrap()
}

#[test]
fn emit_then_parse_is_identity() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::parse(&cfg.emit()).unwrap(), cfg);
    let mut other = cfg.clone();
    other.train.tm_fill = MaskFill::Zeros;
    other.train.lr = 1.25e-4;
    other.attention.positional_encoding = true;
    other.data.brightness = (0.5, 1.5);
    other.dctcn.dilations = vec![1, 3];
    other.train.schedule = "constant".into();
    assert_eq!(RunConfig::parse(&other.emit()).unwrap(), other);
    assert_eq!(RunConfig::keys().count(), cfg.emit().lines().count() - 1);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let cases = [
        ("version = 1\n# fine\nnope = 3\n", 3),
        ("train.lr = 0.1\ntrain.lr = 0.2\n", 2),
        ("\n\ntrain.epochs = many\n", 3),
        ("version = 2\n", 1),
        ("train.use_mixup = yes\n", 1),
        ("data.span = 3\n", 1),
        ("just words\n", 1),
        ("train.tm_fill = noise\n", 1),
    ];
    for (text, line) in cases {
        match RunConfig::parse(text) {
            Err(Error::ConfigParse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let cfg = RunConfig::parse("# header\n\n  train.epochs = 3   # trailing\n").unwrap();
    assert_eq!(cfg.train.epochs, 3);
}

#[test]
fn shipped_configs_are_valid() {
    let bench = shipped("benchmark.conf");
    bench.validate().unwrap();
    assert_eq!((bench.data.classes, bench.data.per_class, bench.data.seed), (10, 200, 42));
    assert_eq!((bench.data.frames, bench.train.epochs), (29, 30));
    let full = shipped("full_scale.conf");
    full.validate().unwrap();
    assert_eq!(full.train.label_smoothing, 0.95);
    assert_eq!(full.build_model().unwrap().widths.decoded, 512 + 6 * 64);
}

#[test]
fn ablation_rows_differ_only_in_their_toggles() {
    let rows = [
        ("ablation/strategies/no_tm.conf", vec!["use_time_masking"]),
        ("ablation/strategies/no_mixup.conf", vec!["use_mixup"]),
        ("ablation/strategies/no_wb.conf", vec!["use_word_boundary"]),
        ("ablation/strategies/no_ls.conf", vec!["use_label_smoothing"]),
    ];
    let full = shipped("ablation/strategies/full.conf");
    full.validate().unwrap();
    assert_eq!(full, shipped("benchmark.conf"));
    for (file, toggles) in rows {
        let row = shipped(file);
        row.validate().unwrap();
        let diff = full.diff(&row);
        assert_eq!(diff.len(), toggles.len(), "{file}: {diff:?}");
        for ((a, b), t) in diff.iter().zip(&toggles) {
            assert_eq!(a, &format!("train.{t} = true"));
            assert_eq!(b, &format!("train.{t} = false"));
        }
    }
    let base = shipped("ablation/without_tm/no_tm.conf");
    for file in ["ablation/without_tm/no_tm_mixup.conf", "ablation/without_tm/no_tm_wb.conf", "ablation/without_tm/no_tm_ls.conf"] {
        let row = shipped(file);
        row.validate().unwrap();
        assert_eq!(base.diff(&row).len(), 1, "{file}");
    }
    assert_eq!(shipped("ablation/without_tm/full.conf"), full);
}

fn tiny_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.frontend = tiny_frontend();
    cfg.attention = AttentionConfig {
        d_model: 4,
        d_ff: 8,
        ..tiny_attention()
    };
    cfg.dctcn = DctcnConfig {
        width: 4,
        ..tiny_dctcn()
    };
    cfg.data.classes = 3;
    cfg.data.frames = 6;
    cfg.data.span = (3, 5);
    cfg.data.size = 16;
    cfg.train.crop_size = 16;
    cfg
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let cfg = tiny_run();
    let net = cfg.build_model().unwrap();
    let params = net.init_params(3);
    let ck = Checkpoint::from_params(&params, &cfg);
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, params.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.isnc");
    ck.save(&path, false).unwrap();
    assert!(matches!(ck.save(&path, false), Err(Error::Io { .. })));
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), bytes);

    let (restored_cfg, _, restored) = loaded.restore().unwrap();
    assert_eq!(restored_cfg, cfg);
    let mut paths: Vec<&str> = loaded.entries.iter().map(|e| e.path.as_str()).collect();
    let n = paths.len();
    paths.dedup();
    assert_eq!(paths.len(), n);
    assert_eq!(n, params.len());
    for (p, t) in params.iter() {
        let r = restored.get(p).unwrap();
        assert_eq!(r.shape(), t.shape());
        for (a, b) in r.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
    assert_eq!(Checkpoint::from_params(&restored, &cfg).to_bytes().unwrap(), bytes);
}

#[test]
fn checkpoint_keeps_toggle_in_config_snapshot() {
    let mut cfg = tiny_run();
    cfg.train.use_word_boundary = false;
    let net = cfg.build_model().unwrap();
    let ck = Checkpoint::from_params(&net.init_params(1), &cfg);
    assert!(ck.config.contains("train.use_word_boundary = false\n"));
    let (_, restored_net, _) = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap().restore().unwrap();
    assert!(!restored_net.cfg.word_boundary);
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let cfg = tiny_run();
    let bytes = Checkpoint::from_params(&cfg.build_model().unwrap().init_params(1), &cfg)
        .to_bytes()
        .unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[1] = b'Z';
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    for b in [bad_magic, bad_version, bytes[..bytes.len() - 3].to_vec()] {
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Format(_))));
    }
    let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
    ck.entries.pop();
    assert!(ck.restore().is_err());
}

#[test]
fn heatmap_text_formats() {
    let m = vec![0.2, 0.3, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 1.0];
    let csv = matrix_csv(&m, 3);
    assert_eq!(csv, "0.200000,0.300000,0.500000\n0.333334,0.333333,0.333333\n0.000000,0.000000,1.000000\n");
    let pgm = matrix_pgm(&m, 3);
    assert!(pgm.starts_with(b"P5\n3 3\n255\n"));
    let px = &pgm[pgm.len() - 9..];
    assert_eq!(px, &[51, 77, 128, 85, 85, 85, 0, 0, 255]);
    assert_eq!(
        scores_csv(&[0.25, 0.75], &[0.0, 1.0]),
        "frame,score,boundary\n0,0.250000,0\n1,0.750000,1\n"
    );
}

fn untrained_trace(frames: usize) -> (AttentionTrace, Video) {
    let mut cfg = tiny_run();
    cfg.data.frames = frames;
    cfg.train.use_word_boundary = true;
    let net = cfg.build_model().unwrap();
    let params = net.init_params(4);
    let data = Tensor::uniform(vec![frames * 256], 0.0, 1.0, &mut rng(5)).into_data();
    let mask = (0..frames).map(|t| f64::from(u8::from((8..20).contains(&t)))).collect();
    let video = Video::new(frames, 16, 16, data, mask).unwrap();
    (attention_trace(&net, &params, &video).unwrap(), video)
}

#[test]
fn exported_heatmaps() {
    let (trace, video) = untrained_trace(29);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("clip");
    assert!(matches!(
        export_heatmaps(&trace, 3, &video.boundary, &prefix, false),
        Err(Error::LayerOutOfRange { layer: 3, layers: 2 })
    ));
    let files = export_heatmaps(&trace, 2, &video.boundary, &prefix, false).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        [
            "clip_layer2_head1.csv",
            "clip_layer2_head1.pgm",
            "clip_layer2_head2.csv",
            "clip_layer2_head2.pgm",
            "clip_layer2_mean.csv",
            "clip_layer2_mean.pgm",
            "clip_layer2_scores.csv"
        ]
    );
    for f in files.iter().filter(|f| f.extension().unwrap() == "csv" && !f.ends_with("clip_layer2_scores.csv")) {
        let text = std::fs::read_to_string(f).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 29);
        for row in rows {
            let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells.len(), 29);
            assert!((cells.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
        }
    }
    for f in files.iter().filter(|f| f.extension().unwrap() == "pgm") {
        let bytes = std::fs::read(f).unwrap();
        assert!(bytes.starts_with(b"P5\n29 29\n255\n"));
        assert_eq!(*bytes[bytes.len() - 29 * 29..].iter().max().unwrap(), 255);
    }
    let scores = std::fs::read_to_string(dir.path().join("clip_layer2_scores.csv")).unwrap();
    let lines: Vec<&str> = scores.lines().collect();
    assert_eq!(lines.len(), 30);
    assert_eq!(lines[9], "8,".to_string() + lines[9].split(',').nth(1).unwrap() + ",1");
    assert!(lines[1].ends_with(",0"));
    assert!(export_heatmaps(&trace, 2, &video.boundary, &prefix, false).is_err());
    assert!(export_heatmaps(&trace, 2, &video.boundary, &prefix, true).is_ok());
}

proptest! {
    #[test]
    fn rounded_rows_keep_their_total(seed in any::<u64>(), len in 1usize..40) {
        let mut r = rng(seed);
        let raw: Vec<f64> = (0..len).map(|_| r.random::<f64>().powi(3)).collect();
        let total: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let units = round_row(&row);
        prop_assert_eq!(units.iter().sum::<i64>(), 1_000_000);
        for (u, v) in units.iter().zip(&row) {
            prop_assert!((*u as f64 / 1e6 - v).abs() < 2e-6);
        }
    }
}
