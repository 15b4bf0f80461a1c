//! Convolution kernels over up to three spatial axes, channels-last.
//!
//! The production path lowers each chunk of samples to a column matrix and
//! runs one matrix product per chunk. [`conv_oracle`] is a direct nested-loop
//! evaluation kept independent of that path for equivalence testing.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;

/// Upper bound on column-buffer entries materialized at once.
const COL_BUDGET: usize = 1 << 21;

/// Shape of one convolution. Input is `[batch, d, h, w, cin]`, the kernel is
/// `[kd, kh, kw, cin, cout]` and output is `[batch, od, oh, ow, cout]`.
/// Lower-rank convolutions set the unused axes to extent 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub input: [usize; 3],
    pub cin: usize,
    pub kernel: [usize; 3],
    pub cout: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvGeometry {
    /// Output extent per axis: `(n + 2*pad - dilation*(k-1) - 1) / stride + 1`.
    pub fn output(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 || self.dilation[a] == 0 || self.kernel[a] == 0 {
                return Err(TensorError::shape(
                    "conv",
                    format!("axis {a}: stride, dilation and kernel must be >= 1"),
                ));
            }
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = self.input[a] + 2 * self.pad[a];
            if span > padded {
                return Err(TensorError::shape(
                    "conv",
                    format!(
                        "axis {a}: dilated kernel span {span} exceeds padded input {padded}"
                    ),
                ));
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    fn in_len(&self) -> usize {
        self.input.iter().product::<usize>() * self.cin
    }

    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn chunk(&self, rows: usize) -> usize {
        (COL_BUDGET / (rows * self.taps()).max(1)).clamp(1, self.batch)
    }
}

/// Input coordinate for output index `o` and tap `k` on one axis, if inside.
#[inline]
fn source(o: usize, k: usize, stride: usize, dil: usize, pad: usize, n: usize) -> Option<usize> {
    let pos = (o * stride + k * dil) as isize - pad as isize;
    (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
}

/// Taps `[lo, hi)` of a `k`-tap kernel that land inside an `n`-long axis
/// for output index `o`.
#[inline]
fn tap_range(o: usize, k: usize, stride: usize, dil: usize, pad: usize, n: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let dil = dil as isize;
    let lo = if start >= 0 { 0 } else { (-start + dil - 1) / dil };
    let hi = if start >= n as isize { 0 } else { (n as isize - 1 - start) / dil + 1 };
    let hi = (hi as usize).min(k);
    ((lo as usize).min(hi), hi)
}

fn im2col(g: &ConvGeometry, out: [usize; 3], x: &[f64], col: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let cin = g.cin;
    let taps = g.taps();
    let run = kw * cin;
    let mut row = 0;
    for od in 0..out[0] {
        for oh in 0..out[1] {
            for ow in 0..out[2] {
                let dst = &mut col[row * taps..(row + 1) * taps];
                let (lo, hi) = tap_range(ow, kw, g.stride[2], g.dilation[2], g.pad[2], w);
                let mut off = 0;
                for a in 0..kd {
                    let id = source(od, a, g.stride[0], g.dilation[0], g.pad[0], d);
                    for b in 0..kh {
                        let ih = source(oh, b, g.stride[1], g.dilation[1], g.pad[1], h);
                        let cells = &mut dst[off..off + run];
                        off += run;
                        let (Some(i), Some(j)) = (id, ih) else {
                            cells.fill(0.0);
                            continue;
                        };
                        cells[..lo * cin].fill(0.0);
                        cells[hi * cin..].fill(0.0);
                        let base = (i * h + j) * w;
                        if g.dilation[2] == 1 {
                            if hi > lo {
                                let s = (base + ow * g.stride[2] + lo - g.pad[2]) * cin;
                                cells[lo * cin..hi * cin].copy_from_slice(&x[s..s + (hi - lo) * cin]);
                            }
                        } else {
                            for c in lo..hi {
                                let s = (base + ow * g.stride[2] + c * g.dilation[2] - g.pad[2]) * cin;
                                cells[c * cin..(c + 1) * cin].copy_from_slice(&x[s..s + cin]);
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(g: &ConvGeometry, out: [usize; 3], col: &[f64], dx: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let cin = g.cin;
    let taps = g.taps();
    let run = kw * cin;
    let mut row = 0;
    for od in 0..out[0] {
        for oh in 0..out[1] {
            for ow in 0..out[2] {
                let src = &col[row * taps..(row + 1) * taps];
                let (lo, hi) = tap_range(ow, kw, g.stride[2], g.dilation[2], g.pad[2], w);
                let mut off = 0;
                for a in 0..kd {
                    let id = source(od, a, g.stride[0], g.dilation[0], g.pad[0], d);
                    for b in 0..kh {
                        let ih = source(oh, b, g.stride[1], g.dilation[1], g.pad[1], h);
                        let cells = &src[off..off + run];
                        off += run;
                        let (Some(i), Some(j)) = (id, ih) else { continue };
                        let base = (i * h + j) * w;
                        for c in lo..hi {
                            let s = (base + ow * g.stride[2] + c * g.dilation[2] - g.pad[2]) * cin;
                            for (t, v) in dx[s..s + cin].iter_mut().zip(&cells[c * cin..(c + 1) * cin]) {
                                *t += v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Geometry restricted to the kernel taps that touch the input for at least
/// one output position, with the offset of the first kept tap per axis.
/// `None` when every tap is used, or when the restriction would need
/// negative padding or change the output extent.
fn pruned(g: &ConvGeometry, out: [usize; 3]) -> Option<(ConvGeometry, [usize; 3])> {
    let mut p = *g;
    let mut first = [0; 3];
    for a in 0..3 {
        let (mut lo, mut hi) = (g.kernel[a], 0);
        for o in 0..out[a] {
            let (l, h) = tap_range(o, g.kernel[a], g.stride[a], g.dilation[a], g.pad[a], g.input[a]);
            if h > l {
                lo = lo.min(l);
                hi = hi.max(h);
            }
        }
        if hi <= lo || lo * g.dilation[a] > g.pad[a] {
            return None;
        }
        p.kernel[a] = hi - lo;
        p.pad[a] = g.pad[a] - lo * g.dilation[a];
        first[a] = lo;
    }
    (p.kernel != g.kernel && p.output().ok() == Some(out)).then_some((p, first))
}

/// Copies the kept taps of `w` (laid out for `g`) into a kernel for `p`.
fn crop_kernel(g: &ConvGeometry, p: &ConvGeometry, first: [usize; 3], w: &[f64]) -> Vec<f64> {
    let cell = g.cin * g.cout;
    let mut out = Vec::with_capacity(p.kernel.iter().product::<usize>() * cell);
    for a in 0..p.kernel[0] {
        for b in 0..p.kernel[1] {
            let s = (((a + first[0]) * g.kernel[1] + b + first[1]) * g.kernel[2] + first[2]) * cell;
            out.extend_from_slice(&w[s..s + p.kernel[2] * cell]);
        }
    }
    out
}

fn expand_kernel(g: &ConvGeometry, p: &ConvGeometry, first: [usize; 3], dw: &[f64]) -> Vec<f64> {
    let cell = g.cin * g.cout;
    let mut out = vec![0.0; g.taps() * g.cout];
    let mut src = 0;
    for a in 0..p.kernel[0] {
        for b in 0..p.kernel[1] {
            let s = (((a + first[0]) * g.kernel[1] + b + first[1]) * g.kernel[2] + first[2]) * cell;
            let len = p.kernel[2] * cell;
            out[s..s + len].copy_from_slice(&dw[src..src + len]);
            src += len;
        }
    }
    out
}

/// Production convolution: `y = conv(x, w) + bias`.
pub fn conv_forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Result<Vec<f64>> {
    let out = g.output()?;
    check_lengths(g, x, w)?;
    if let Some((p, first)) = pruned(g, out) {
        return conv_forward(&p, x, &crop_kernel(g, &p, first, w), bias);
    }
    let rows = out.iter().product::<usize>();
    let taps = g.taps();
    let in_len = g.in_len();
    let mut y = vec![0.0; g.batch * rows * g.cout];
    if g.pointwise() {
        gemm(g.batch * rows, taps, g.cout, x, false, w, false, &mut y, false);
    } else {
        let chunk = g.chunk(rows);
        let mut col = vec![0.0; chunk * rows * taps];
        let mut n0 = 0;
        while n0 < g.batch {
            let nb = chunk.min(g.batch - n0);
            for i in 0..nb {
                let n = n0 + i;
                im2col(
                    g,
                    out,
                    &x[n * in_len..(n + 1) * in_len],
                    &mut col[i * rows * taps..(i + 1) * rows * taps],
                );
            }
            let ys = &mut y[n0 * rows * g.cout..(n0 + nb) * rows * g.cout];
            gemm(nb * rows, taps, g.cout, &col, false, w, false, ys, false);
            n0 += nb;
        }
    }
    if let Some(b) = bias {
        for px in y.chunks_exact_mut(g.cout) {
            for (v, bb) in px.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    Ok(y)
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Vec<f64>,
}

pub fn conv_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads> {
    let out = g.output()?;
    check_lengths(g, x, w)?;
    if let Some((p, first)) = pruned(g, out) {
        let mut grads = conv_backward(&p, x, &crop_kernel(g, &p, first, w), dy, need_dx, need_dw)?;
        grads.dw = grads.dw.map(|dw| expand_kernel(g, &p, first, &dw));
        return Ok(grads);
    }
    let rows = out.iter().product::<usize>();
    let taps = g.taps();
    let in_len = g.in_len();
    let mut db = vec![0.0; g.cout];
    for px in dy.chunks_exact(g.cout) {
        for (s, v) in db.iter_mut().zip(px) {
            *s += v;
        }
    }
    let mut dx = need_dx.then(|| vec![0.0; g.batch * in_len]);
    let mut dw = need_dw.then(|| vec![0.0; taps * g.cout]);
    if g.pointwise() {
        let m = g.batch * rows;
        if let Some(dw) = dw.as_mut() {
            gemm(taps, m, g.cout, x, true, dy, false, dw, false);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(m, g.cout, taps, dy, false, w, true, dx, false);
        }
        return Ok(ConvGrads { dx, dw, db });
    }
    let chunk = g.chunk(rows);
    let mut col = vec![0.0; chunk * rows * taps];
    let mut n0 = 0;
    while n0 < g.batch {
        let nb = chunk.min(g.batch - n0);
        let m = nb * rows;
        let dys = &dy[n0 * rows * g.cout..(n0 + nb) * rows * g.cout];
        if let Some(dw) = dw.as_mut() {
            for i in 0..nb {
                let n = n0 + i;
                im2col(
                    g,
                    out,
                    &x[n * in_len..(n + 1) * in_len],
                    &mut col[i * rows * taps..(i + 1) * rows * taps],
                );
            }
            gemm(taps, m, g.cout, &col, true, dys, false, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(m, g.cout, taps, dys, false, w, true, &mut col, false);
            for i in 0..nb {
                let n = n0 + i;
                col2im(
                    g,
                    out,
                    &col[i * rows * taps..(i + 1) * rows * taps],
                    &mut dx[n * in_len..(n + 1) * in_len],
                );
            }
        }
        n0 += nb;
    }
    Ok(ConvGrads { dx, dw, db })
}

fn check_lengths(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Result<()> {
    if x.len() != g.batch * g.in_len() {
        return Err(TensorError::shape(
            "conv",
            format!("input holds {} values, geometry needs {}", x.len(), g.batch * g.in_len()),
        ));
    }
    if w.len() != g.taps() * g.cout {
        return Err(TensorError::shape(
            "conv",
            format!("kernel holds {} values, geometry needs {}", w.len(), g.taps() * g.cout),
        ));
    }
    Ok(())
}

/// Direct-loop convolution used as an independent reference.
pub fn conv_oracle(g: &ConvGeometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Result<Vec<f64>> {
    let out = g.output()?;
    check_lengths(g, x, w)?;
    let [d, h, wd] = g.input;
    let [kd, kh, kw] = g.kernel;
    let (cin, cout) = (g.cin, g.cout);
    let mut y = Vec::with_capacity(g.batch * out.iter().product::<usize>() * cout);
    for n in 0..g.batch {
        for od in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    for co in 0..cout {
                        let mut acc = bias.map_or(0.0, |b| b[co]);
                        for a in 0..kd {
                            let id = (od * g.stride[0] + a * g.dilation[0]) as isize - g.pad[0] as isize;
                            if id < 0 || id >= d as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let ih = (oh * g.stride[1] + b * g.dilation[1]) as isize
                                    - g.pad[1] as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for c in 0..kw {
                                    let iw = (ow * g.stride[2] + c * g.dilation[2]) as isize
                                        - g.pad[2] as isize;
                                    if iw < 0 || iw >= wd as isize {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let xi = (((n * d + id as usize) * h + ih as usize) * wd
                                            + iw as usize)
                                            * cin
                                            + ci;
                                        let wi = (((a * kh + b) * kw + c) * cin + ci) * cout + co;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
        }
    }
    Ok(y)
}
