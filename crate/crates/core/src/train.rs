//! Training and evaluation loops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use infosync_tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::augment::{default_max_span, eval_view, mixup, sample_lambda, spatial_augment, time_mask, SpatialAugment};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{argmax, cross_entropy, smoothed_targets};
use crate::model::InfoSyncNet;
use crate::nn::{apply_batch_stats, derive_rng, fresh_seed, Ctx};
use crate::optim::{schedule, AdamW, Progress};
use crate::params::ModelParams;
use crate::video::Video;

/// RNG stream reserved for batch-level draws (shuffle, mixup).
const BATCH_STREAM: u64 = 1 << 63;

/// Independent random stream for one sample in one epoch, so augmentation
/// does not depend on batch composition or order.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    derive_rng(seed, ((epoch as u64) << 32) | index as u64)
}

fn batch_rng(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    derive_rng(seed, BATCH_STREAM | ((epoch as u64) << 32) | batch as u64)
}

/// Order in which the `n` training samples are visited in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut batch_rng(seed, epoch, usize::MAX >> 32));
    order
}

/// Model inputs for a set of clips of identical shape.
#[derive(Clone, Debug)]
pub struct Batch {
    pub video: Tensor,
    pub boundary: Option<Tensor>,
}

impl Batch {
    pub fn from_videos(videos: &[Video], word_boundary: bool) -> Result<Self> {
        let first = videos.first().ok_or(Error::EmptyDataset)?;
        let (t, h, w) = (first.frames, first.height, first.width);
        let mut data = Vec::with_capacity(videos.len() * t * h * w);
        let mut mask = Vec::with_capacity(videos.len() * t);
        for v in videos {
            if (v.frames, v.height, v.width) != (t, h, w) {
                return Err(Error::InvalidInput("clips in a batch differ in shape".into()));
            }
            data.extend_from_slice(&v.data);
            mask.extend_from_slice(&v.boundary);
        }
        let n = videos.len();
        Ok(Batch {
            video: Tensor::new(vec![n, t, h, w, 1], data)?,
            boundary: if word_boundary { Some(Tensor::new(vec![n, t, 1], mask)?) } else { None },
        })
    }
}

/// One metrics-log row.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\twall_seconds";

impl EpochMetrics {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc, self.wall_seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// 1-based epoch whose parameters are in `best`.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best: ModelParams,
    pub last: ModelParams,
}

/// Logits and labels of a whole dataset.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Predictions {
    /// Fraction of rows whose argmax (lowest index on ties) is the label.
    pub fn top1(&self) -> Result<f64> {
        top1(&self.logits, &self.labels)
    }

    /// Mean unsmoothed cross-entropy.
    pub fn loss(&self) -> Result<f64> {
        if self.labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let classes = self.logits[0].len();
        let mut total = 0.0;
        for (z, &y) in self.logits.iter().zip(&self.labels) {
            total += cross_entropy(z, &smoothed_targets(y, classes, 0.0)?)?;
        }
        Ok(total / self.labels.len() as f64)
    }

    /// `(correct, total)` per class.
    pub fn per_class(&self, classes: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); classes];
        for (z, &y) in self.logits.iter().zip(&self.labels) {
            out[y].1 += 1;
            if argmax(z) == y {
                out[y].0 += 1;
            }
        }
        out
    }
}

pub fn top1(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if logits.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    let correct = logits.iter().zip(labels).filter(|(z, &y)| argmax(z) == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Evaluation-mode forward over `dataset` with center crops.
pub fn predict(net: &InfoSyncNet, params: &ModelParams, dataset: &Dataset, crop: usize, batch_size: usize) -> Result<Predictions> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut logits = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let videos = chunk
            .iter()
            .map(|&i| eval_view(&dataset.video(i), crop))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::from_videos(&videos, net.cfg.word_boundary)?;
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, params, false);
        let v = cx.input(batch.video);
        let b = batch.boundary.map(|b| cx.input(b));
        let out = net.forward(&mut cx, v, b)?;
        let z = tape.value(out.logits);
        let c = z.shape()[1];
        logits.extend(z.data().chunks_exact(c).map(|r| r.to_vec()));
    }
    Ok(Predictions {
        logits,
        labels: (0..dataset.len()).map(|i| dataset.label(i)).collect(),
    })
}

/// Top-1 accuracy of `params` on `dataset`.
pub fn evaluate(net: &InfoSyncNet, params: &ModelParams, dataset: &Dataset, crop: usize) -> Result<f64> {
    predict(net, params, dataset, crop, 32)?.top1()
}

/// Augmented clips and mixed targets for one optimizer step.
fn training_batch(
    dataset: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<(Vec<Video>, Vec<Vec<f64>>, Vec<usize>)> {
    let classes = dataset.classes;
    let aug = SpatialAugment {
        crop_size: cfg.crop_size,
        random_crop: cfg.use_random_crop,
        flip: cfg.use_flip,
    };
    let mut videos = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut rng = sample_rng(cfg.seed, epoch, i);
        let mut v = spatial_augment(&dataset.video(i), &aug, &mut rng)?;
        if cfg.use_time_masking {
            let span = default_max_span(v.frames, cfg.time_mask_ratio);
            v = time_mask(&v, span, cfg.tm_fill, &mut rng)?.0;
        }
        videos.push(v);
        targets.push(smoothed_targets(dataset.label(i), classes, cfg.epsilon())?);
        labels.push(dataset.label(i));
    }
    if cfg.use_mixup && indices.len() > 1 {
        let mut rng = batch_rng(cfg.seed, epoch, batch);
        let lambda = sample_lambda(cfg.mixup_alpha, &mut rng)?;
        let mut partner: Vec<usize> = (0..indices.len()).collect();
        partner.shuffle(&mut rng);
        let mixed = partner
            .iter()
            .enumerate()
            .map(|(i, &j)| mixup(&videos[i], &videos[j], lambda))
            .collect::<Result<Vec<_>>>()?;
        let q = partner
            .iter()
            .enumerate()
            .map(|(i, &j)| targets[i].iter().zip(&targets[j]).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect())
            .collect();
        let dominant = partner
            .iter()
            .enumerate()
            .map(|(i, &j)| if lambda >= 0.5 { labels[i] } else { labels[j] })
            .collect();
        return Ok((mixed, q, dominant));
    }
    Ok((videos, targets, labels))
}

/// Trains from `params`, selecting the parameters with the best validation
/// accuracy (earliest on ties; the last epoch without a validation set).
/// Stops early after `max_steps` optimizer steps when given. `on_epoch`
/// sees each metrics row as it is produced.
pub fn train(
    net: &InfoSyncNet,
    mut params: ModelParams,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    max_steps: Option<usize>,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sched = schedule(&cfg.schedule, cfg.warmup_epochs)?;
    let mut opt = AdamW::new(cfg.adamw());
    let start = Instant::now();
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;

    'epochs: for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, train_set.len());
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if max_steps.is_some_and(|m| step_losses.len() >= m) {
                break 'epochs;
            }
            let (videos, targets, labels) = training_batch(train_set, chunk, cfg, epoch, b)?;
            let batch = Batch::from_videos(&videos, net.cfg.word_boundary)?;
            let q = Tensor::new(vec![targets.len(), train_set.classes], targets.concat())?;
            let dropout_seed = fresh_seed(&mut batch_rng(cfg.seed ^ 0xD5, epoch, b));
            let mut tape = Tape::new();
            let (loss, grads, stats) = {
                let mut cx = Ctx::new(&mut tape, &params, true).with_dropout_seed(dropout_seed);
                let v = cx.input(batch.video);
                let bd = batch.boundary.map(|t| cx.input(t));
                let out = net.forward(&mut cx, v, bd)?;
                let qv = cx.input(q);
                let loss = cx.tape.cross_entropy(out.logits, qv)?;
                let stats = cx.take_batch_stats();
                let value = tape.value(loss).item();
                let z = tape.value(out.logits);
                for (row, &y) in z.data().chunks_exact(train_set.classes).zip(&labels) {
                    correct += usize::from(argmax(row) == y);
                }
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        loss: value,
                        epoch: epoch + 1,
                        batch: b,
                    });
                }
                (value, tape.backward(loss)?, stats)
            };
            let lr = sched.lr(
                cfg.lr,
                Progress {
                    epoch,
                    step: b,
                    steps_per_epoch,
                    epochs: cfg.epochs,
                },
            );
            opt.step(&mut params, &grads, lr)?;
            apply_batch_stats(&mut params, &stats, cfg.bn_momentum)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            step_losses.push(loss);
        }
        if seen == 0 {
            break;
        }
        let (val_loss, val_acc) = match val_set.filter(|v| !v.is_empty()) {
            Some(v) => {
                let p = predict(net, &params, v, cfg.crop_size, cfg.eval_batch_size)?;
                (p.loss()?, p.top1()?)
            }
            None => (f64::NAN, f64::NAN),
        };
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
            wall_seconds: if cfg.log_wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&row)?;
        let improved = match &best {
            None => true,
            Some((_, acc, _)) => val_acc > *acc || val_acc.is_nan(),
        };
        if improved {
            best = Some((epoch + 1, val_acc, params.clone()));
        }
        history.push(row);
    }
    let (best_epoch, best_val_acc, best) = best.unwrap_or((0, f64::NAN, params.clone()));
    Ok(TrainReport {
        history,
        step_losses,
        best_epoch,
        best_val_acc,
        best,
        last: params,
    })
}

/// Output locations of [`train_to_files`].
#[derive(Clone, Debug)]
pub struct TrainOutputs<'a> {
    pub checkpoint: &'a Path,
    pub metrics: &'a Path,
    pub force: bool,
}

/// Builds the model from `cfg`, trains it, streams the metrics log and
/// writes the best-validation checkpoint with the configuration snapshot.
pub fn train_to_files(
    cfg: &RunConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    out: &TrainOutputs<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(cfg, train_set)?;
    if let Some(v) = val_set {
        check_dataset(cfg, v)?;
    }
    for path in [out.checkpoint, out.metrics] {
        if !out.force && path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::AlreadyExists)));
        }
    }
    let net = cfg.build_model()?;
    let params = net.init_params(cfg.train.seed);
    let file = if out.force { File::create(out.metrics) } else { File::create_new(out.metrics) }
        .map_err(|e| Error::io(out.metrics, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| Error::io(out.metrics, e);
    writeln!(log, "{METRICS_HEADER}").map_err(io)?;
    let report = train(&net, params, train_set, val_set, &cfg.train, None, |row| {
        writeln!(log, "{}", row.tsv()).map_err(io)?;
        log.flush().map_err(io)
    })?;
    Checkpoint::from_params(&report.best, cfg).save(out.checkpoint, out.force)?;
    Ok(report)
}

/// The dataset must match the configured clip geometry and class count.
pub fn check_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if ds.classes != cfg.data.classes || ds.frames != cfg.data.frames || ds.size < cfg.train.crop_size {
        return Err(Error::Format(format!(
            "dataset (T={}, S={}, classes={}) does not fit config (T={}, crop={}, classes={})",
            ds.frames, ds.size, ds.classes, cfg.data.frames, cfg.train.crop_size, cfg.data.classes
        )));
    }
    Ok(())
}
