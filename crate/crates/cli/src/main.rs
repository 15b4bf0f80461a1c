use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infosync_core::augment::eval_view;
use infosync_core::heatmap::{attention_trace, export_heatmaps};
use infosync_core::train::{check_dataset, predict, train_to_files, TrainOutputs};
use infosync_core::verify::{SuiteRegistry, VerifyEnv};
use infosync_core::{gen_dataset, Checkpoint, Dataset, Error, RunConfig};

#[derive(Parser)]
#[command(name = "infosync", version, about = "Lip-reading model with attention-based frame synchronization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val/test datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for train.isnd, val.isnd and test.isnd.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Print per-class and top-1 accuracy of a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Export attention heatmaps and key-frame scores for one sample.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// 1-based attention layer; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run verification suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train.isnd and, optionally, val.isnd.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.isnc and metrics.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    no_mixup: bool,
    #[arg(long)]
    no_wb: bool,
    #[arg(long)]
    no_ls: bool,
    #[arg(long)]
    no_tm: bool,
    /// Remove the encoder layers so the front-end feeds the decoder directly.
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    no_flip: bool,
    #[arg(long)]
    no_crop: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        t.use_mixup &= !self.no_mixup;
        t.use_word_boundary &= !self.no_wb;
        t.use_label_smoothing &= !self.no_ls;
        t.use_time_masking &= !self.no_tm;
        t.use_flip &= !self.no_flip;
        t.use_random_crop &= !self.no_crop;
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if self.no_attention {
            cfg.attention.layers = 0;
        }
    }
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.isnd"))
}

fn gen_data(config: &Option<PathBuf>, out: &Path, force: bool) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let d = &cfg.data;
    let splits = gen_dataset(&d.spec()?, d.per_class, d.fractions, d.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, ds) in splits.all() {
        let path = split_path(out, name);
        ds.save(&path, force)?;
        println!("{}: {} samples", path.display(), ds.len());
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    args.apply(&mut cfg);
    cfg.validate()?;
    let train_set = Dataset::load(&split_path(&args.data, SPLITS[0]))?;
    check_dataset(&cfg, &train_set)?;
    let val_path = split_path(&args.data, SPLITS[1]);
    let val_set = match val_path.exists() {
        true => Some(Dataset::load(&val_path)?).filter(|d| !d.is_empty()),
        false => None,
    };
    if let Some(v) = &val_set {
        check_dataset(&cfg, v)?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let checkpoint = args.out.join("model.isnc");
    let metrics = args.out.join("metrics.tsv");
    let out = TrainOutputs {
        checkpoint: &checkpoint,
        metrics: &metrics,
        force: args.force,
    };
    let report = train_to_files(&cfg, &train_set, val_set.as_ref(), &out)?;
    println!(
        "best epoch {} val_acc {:.4}; wrote {} and {}",
        report.best_epoch,
        report.best_val_acc,
        checkpoint.display(),
        metrics.display()
    );
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path) -> Result<(), Error> {
    let (cfg, net, params) = Checkpoint::load(checkpoint)?.restore()?;
    let ds = Dataset::load(data)?;
    check_dataset(&cfg, &ds)?;
    let p = predict(&net, &params, &ds, cfg.train.crop_size, cfg.train.eval_batch_size)?;
    println!("class\tcorrect\ttotal\taccuracy");
    for (c, (ok, n)) in p.per_class(cfg.data.classes).into_iter().enumerate() {
        let acc = if n == 0 { 0.0 } else { ok as f64 / n as f64 };
        println!("{c}\t{ok}\t{n}\t{acc:.4}");
    }
    println!("top1={:.4}", p.top1()?);
    Ok(())
}

fn heatmap(checkpoint: &Path, data: &Path, sample: usize, layer: Option<usize>, prefix: &Path, force: bool) -> Result<(), Error> {
    let (cfg, net, params) = Checkpoint::load(checkpoint)?.restore()?;
    let ds = Dataset::load(data)?;
    check_dataset(&cfg, &ds)?;
    if sample >= ds.len() {
        return Err(Error::InvalidInput(format!("sample {sample} out of range 0..{}", ds.len())));
    }
    let video = eval_view(&ds.video(sample), cfg.train.crop_size)?;
    let trace = attention_trace(&net, &params, &video)?;
    let layer = layer.unwrap_or(trace.layers());
    for path in export_heatmaps(&trace, layer, &video.boundary, prefix, force)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Architecture(_) | Error::InvalidInput(_) | Error::LayerOutOfRange { .. } => 2,
        Error::ConfigParse { .. } | Error::Io { .. } | Error::Format(_) | Error::EmptyDataset => 3,
        Error::NonFiniteLoss { .. } => 4,
        Error::Tensor(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { config, out, force } => gen_data(config, out, *force),
        Command::Train(args) => train(args),
        Command::Eval { checkpoint, data } => eval(checkpoint, data),
        Command::Heatmap {
            checkpoint,
            data,
            sample,
            layer,
            out_prefix,
            force,
        } => heatmap(checkpoint, data, *sample, *layer, out_prefix, *force),
        Command::Verify { suite } => {
            let registry = SuiteRegistry::standard();
            match registry.run(suite, &VerifyEnv::default()) {
                Some(report) => {
                    print!("{}", report.render());
                    return if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
                }
                None => {
                    let names: Vec<_> = registry.names().collect();
                    eprintln!("error: unknown suite {suite:?}; expected one of all, {}", names.join(", "));
                    return ExitCode::from(2);
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
