use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infosync_core::verify::{tiny_attention, tiny_dctcn, tiny_frontend};
use infosync_core::{AttentionConfig, Checkpoint, DctcnConfig, RunConfig};
use tempfile::TempDir;

fn infosync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infosync")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny() -> RunConfig {
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
    cfg.data.classes = 2;
    cfg.data.frames = 8;
    cfg.data.span = (3, 6);
    cfg.data.size = 18;
    cfg.data.jitter = 1.0;
    cfg.data.per_class = 8;
    cfg.data.fractions = [0.5, 0.25, 0.25];
    cfg.train.crop_size = 16;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.lr = 3e-3;
    cfg.train.warmup_epochs = 1.0;
    cfg.train.log_wall_clock = false;
    cfg
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(cfg: &RunConfig) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.conf"), cfg.emit()).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn gen(&self, out: &str) -> Output {
        infosync(&["gen-data", "--config", &self.arg("run.conf"), "--out", &self.arg(out)])
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (c, d, o) = (self.arg("run.conf"), self.arg("data"), self.arg(out));
        let mut args = vec!["train", "--config", &c, "--data", &d, "--out", &o];
        args.extend_from_slice(extra);
        infosync(&args)
    }
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stdout:\n{}\nstderr:\n{}", stdout(&out), stderr(&out));
    out
}

#[test]
fn gen_data_writes_three_reproducible_files() {
    let ws = Workspace::new(&tiny());
    ok(ws.gen("a"));
    ok(ws.gen("b"));
    for split in ["train", "val", "test"] {
        let a = std::fs::read(ws.path(&format!("a/{split}.isnd"))).unwrap();
        let b = std::fs::read(ws.path(&format!("b/{split}.isnd"))).unwrap();
        assert_eq!(&a[..4], b"ISND");
        assert_eq!(a, b);
    }
    let again = ws.gen("a");
    assert_eq!(code(&again), 3, "{}", stderr(&again));
    ok(infosync(&["gen-data", "--config", &ws.arg("run.conf"), "--out", &ws.arg("a"), "--force"]));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&infosync(&["gen-data"])), 2);
    assert_eq!(code(&infosync(&["train", "--data", "x"])), 2);
    assert_eq!(code(&infosync(&["frobnicate"])), 2);
    let out = infosync(&["verify", "--suite", "nope"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("grad"));
}

#[test]
fn config_errors_report_line_numbers() {
    let ws = Workspace::new(&tiny());
    std::fs::write(ws.path("bad.conf"), "version = 1\ntrain.lr = fast\n").unwrap();
    let out = infosync(&["gen-data", "--config", &ws.arg("bad.conf"), "--out", &ws.arg("d")]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn train_eval_heatmap_round() {
    let ws = Workspace::new(&tiny());
    ok(ws.gen("data"));
    ok(ws.train("run1", &[]));
    ok(ws.train("run2", &[]));
    for file in ["model.isnc", "metrics.tsv"] {
        let a = std::fs::read(ws.path(&format!("run1/{file}"))).unwrap();
        let b = std::fs::read(ws.path(&format!("run2/{file}"))).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let metrics = std::fs::read_to_string(ws.path("run1/metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let refused = ws.train("run1", &[]);
    assert_eq!(code(&refused), 3);
    ok(ws.train("run1", &["--force"]));

    let out = ok(infosync(&["eval", "--checkpoint", &ws.arg("run1/model.isnc"), "--data", &ws.arg("data/test.isnd")]));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class\tcorrect\ttotal\taccuracy");
    assert_eq!(lines.len(), 2 + 2);
    let last = lines.last().unwrap();
    let value = last.strip_prefix("top1=").unwrap();
    assert_eq!(value.len(), 6, "{last}");
    let top1: f64 = value.parse().unwrap();
    assert!((0.0..=1.0).contains(&top1));

    let prefix = ws.arg("maps/clip");
    std::fs::create_dir_all(ws.path("maps")).unwrap();
    let ck = ws.arg("run1/model.isnc");
    let test = ws.arg("data/test.isnd");
    let out = ok(infosync(&["heatmap", "--checkpoint", &ck, "--data", &test, "--sample", "1", "--out-prefix", &prefix]));
    assert_eq!(stdout(&out).lines().count(), 2 * (2 + 1) + 1);
    let csv = std::fs::read_to_string(ws.path("maps/clip_layer2_mean.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    for row in csv.lines() {
        let sum: f64 = row.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5, "{row}");
    }
    let pgm = std::fs::read(ws.path("maps/clip_layer2_head1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));

    let layer_out = infosync(&["heatmap", "--checkpoint", &ck, "--data", &test, "--layer", "3", "--out-prefix", &prefix]);
    assert_eq!(code(&layer_out), 2);
    let sample_out = infosync(&["heatmap", "--checkpoint", &ck, "--data", &test, "--sample", "99", "--out-prefix", &prefix]);
    assert_eq!(code(&sample_out), 2);
    assert_eq!(code(&infosync(&["heatmap", "--checkpoint", &ck, "--data", &test, "--out-prefix", &prefix])), 3);
}

#[test]
fn overfit_checkpoint_scores_perfectly_on_its_training_data() {
    let mut cfg = tiny();
    cfg.data.per_class = 4;
    cfg.data.fractions = [1.0, 0.0, 0.0];
    cfg.train.epochs = 60;
    cfg.train.batch_size = 8;
    cfg.train.lr = 1e-2;
    cfg.train.schedule = "constant".into();
    let ws = Workspace::new(&cfg);
    ok(ws.gen("data"));
    ok(ws.train("run", &["--no-mixup", "--no-tm", "--no-ls", "--no-flip", "--no-crop"]));
    let out = ok(infosync(&["eval", "--checkpoint", &ws.arg("run/model.isnc"), "--data", &ws.arg("data/train.isnd")]));
    assert_eq!(stdout(&out).lines().last().unwrap(), "top1=1.0000");
}

#[test]
fn ablation_flags_land_in_the_checkpoint_snapshot() {
    let ws = Workspace::new(&tiny());
    ok(ws.gen("data"));
    ok(ws.train("full", &["--epochs", "1"]));
    ok(ws.train("nowb", &["--epochs", "1", "--no-wb"]));
    ok(ws.train("noatt", &["--epochs", "1", "--no-attention"]));
    let snapshot = |dir: &str| Checkpoint::load(&ws.path(&format!("{dir}/model.isnc"))).unwrap().run_config().unwrap();
    let (full, nowb, noatt) = (snapshot("full"), snapshot("nowb"), snapshot("noatt"));
    assert!(!nowb.train.use_word_boundary);
    let diff: Vec<String> = full.diff(&nowb).into_iter().map(|(a, _)| a.split(" = ").next().unwrap().to_string()).collect();
    assert_eq!(diff, ["train.use_word_boundary"]);
    let diff: Vec<String> = full.diff(&noatt).into_iter().map(|(a, _)| a.split(" = ").next().unwrap().to_string()).collect();
    assert_eq!(diff, ["attention.layers"]);
    assert_eq!(noatt.attention.layers, 0);

    let out = infosync(&[
        "heatmap",
        "--checkpoint",
        &ws.arg("noatt/model.isnc"),
        "--data",
        &ws.arg("data/test.isnd"),
        "--out-prefix",
        &ws.arg("clip"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn corrupted_checkpoint_exits_3() {
    let ws = Workspace::new(&tiny());
    ok(ws.gen("data"));
    ok(ws.train("run", &["--epochs", "1"]));
    let path = ws.path("run/model.isnc");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let out = infosync(&["eval", "--checkpoint", &ws.arg("run/model.isnc"), "--data", &ws.arg("data/test.isnd")]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("format"), "{}", stderr(&out));
    let missing = infosync(&["eval", "--checkpoint", &ws.arg("nothing.isnc"), "--data", &ws.arg("data/test.isnd")]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn non_finite_loss_exits_4_with_batch_index() {
    let mut cfg = tiny();
    cfg.train.lr = 1e300;
    cfg.train.schedule = "constant".into();
    cfg.train.epochs = 3;
    let ws = Workspace::new(&cfg);
    ok(ws.gen("data"));
    let out = ws.train("run", &[]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("batch "), "{}", stderr(&out));
}

#[test]
fn verify_reports_per_suite_counts() {
    let out = ok(infosync(&["verify", "--suite", "shapes"]));
    assert_eq!(stdout(&out), "shapes: 6/6 pass\n");
}

#[test]
fn shipped_configs_parse_through_the_cli() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&root.join("benchmark.conf")).unwrap();
    cfg.data.per_class = 2;
    cfg.data.fractions = [0.5, 0.0, 0.5];
    let conf = dir.path().join("small.conf");
    std::fs::write(&conf, cfg.emit()).unwrap();
    let out = ok(infosync(&["gen-data", "--config", conf.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]));
    assert!(stdout(&out).contains("train.isnd: 10 samples"));
}
