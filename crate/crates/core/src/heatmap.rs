//! Attention heatmap export: `T×T` CSV and 8-bit PGM images per head and
//! for the head average, and per-frame key-frame scores.

use std::path::{Path, PathBuf};

use infosync_tensor::Tape;

use crate::attention::{key_frame_scores, AttentionTrace};
use crate::error::{Error, Result};
use crate::io::write_new;
use crate::model::InfoSyncNet;
use crate::nn::Ctx;
use crate::params::ModelParams;
use crate::train::Batch;
use crate::video::Video;

/// Evaluation-mode attention trace of one (already cropped) clip.
pub fn attention_trace(net: &InfoSyncNet, params: &ModelParams, video: &Video) -> Result<AttentionTrace> {
    if net.attention.is_none() {
        return Err(Error::LayerOutOfRange { layer: 1, layers: 0 });
    }
    let batch = Batch::from_videos(std::slice::from_ref(video), net.cfg.word_boundary)?;
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, params, false);
    let v = cx.input(batch.video);
    let b = batch.boundary.map(|b| cx.input(b));
    let out = net.forward(&mut cx, v, b)?;
    let weights: Vec<_> = out.attention.iter().map(|&w| tape.value(w)).collect();
    AttentionTrace::from_weights(&weights, 0)
}

/// Rounds a nonnegative row to multiples of 1e-6 so that the rounded
/// entries keep the row's (rounded) total: each entry is floored and the
/// leftover units go to the largest remainders.
pub fn round_row(row: &[f64]) -> Vec<i64> {
    const UNIT: f64 = 1e6;
    let scaled: Vec<f64> = row.iter().map(|v| v * UNIT).collect();
    let mut out: Vec<i64> = scaled.iter().map(|v| v.floor() as i64).collect();
    let target = scaled.iter().sum::<f64>().round() as i64;
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = (target - out.iter().sum::<i64>()).max(0) as usize;
    for &i in order.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// Rows are query frames, columns key frames, six decimals.
pub fn matrix_csv(m: &[f64], t: usize) -> String {
    let mut out = String::new();
    for row in m.chunks_exact(t) {
        let cells: Vec<String> = round_row(row)
            .into_iter()
            .map(|u| format!("{}.{:06}", u / 1_000_000, u % 1_000_000))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Binary PGM with pixel `round(255·w / max w)`.
pub fn matrix_pgm(m: &[f64], t: usize) -> Vec<u8> {
    let max = m.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{t} {t}\n255\n").into_bytes();
    out.extend(m.iter().map(|&w| if max > 0.0 { (255.0 * w / max).round() as u8 } else { 0 }));
    out
}

/// `frame,score,boundary` rows.
pub fn scores_csv(scores: &[f64], mask: &[f64]) -> String {
    let mut out = String::from("frame,score,boundary\n");
    for (t, (s, m)) in scores.iter().zip(mask).enumerate() {
        out.push_str(&format!("{t},{s:.6},{}\n", u8::from(*m >= 0.5)));
    }
    out
}

/// Writes every head, the head average and the key-frame scores of
/// `layer` (1-based) under `prefix`. Returns the written paths.
pub fn export_heatmaps(trace: &AttentionTrace, layer: usize, mask: &[f64], prefix: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let scores = key_frame_scores(trace, layer)?;
    let t = trace.frames;
    let stem = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let file = |suffix: String| prefix.with_file_name(format!("{stem}_layer{layer}_{suffix}"));
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, bytes: &[u8]| -> Result<()> {
        write_new(&path, bytes, force)?;
        written.push(path);
        Ok(())
    };
    let mut matrices: Vec<(String, &Vec<f64>)> =
        trace.heads[layer - 1].iter().enumerate().map(|(h, m)| (format!("head{}", h + 1), m)).collect();
    matrices.push(("mean".into(), &trace.mean[layer - 1]));
    for (name, m) in matrices {
        emit(file(format!("{name}.csv")), matrix_csv(m, t).as_bytes())?;
        emit(file(format!("{name}.pgm")), &matrix_pgm(m, t))?;
    }
    emit(file("scores.csv".into()), scores_csv(&scores, mask).as_bytes())?;
    Ok(written)
}
