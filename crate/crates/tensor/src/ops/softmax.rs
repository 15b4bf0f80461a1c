use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::{arity, BackwardCx, Fixture, Forward, Operator};
use crate::tensor::Tensor;

/// Writes `softmax(row)` into `out` using the max-shifted form.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// `log(sum(exp(row)))`, shifted by the row max.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax over the trailing axis.
pub struct Softmax;

impl Operator for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("softmax", inputs, 1, 1)?;
        let x = inputs[0];
        let d = *x.shape().last().unwrap();
        let mut out = vec![0.0; x.numel()];
        for (row, o) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            softmax_row(row, o);
        }
        Ok(Forward::new(Tensor::from_parts(x.shape().to_vec(), out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let y = cx.output;
        let d = *y.shape().last().unwrap();
        let mut dx = vec![0.0; y.numel()];
        for ((yr, gr), dr) in y
            .data()
            .chunks_exact(d)
            .zip(cx.grad_output.data().chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
        {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..d {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
        Ok(vec![Some(Tensor::from_parts(y.shape().to_vec(), dx))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(vec![Tensor::randn(vec![3, 5], 1.5, rng)], Attrs::new())
    }
}

/// Batch-mean cross-entropy between `softmax(logits)` and soft targets:
/// `mean_n( -sum_i q[n,i] * log p[n,i] )`. Inputs `logits [N, C]` and
/// `q [N, C]`; targets are not differentiated.
pub struct CrossEntropy;

impl Operator for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("cross_entropy", inputs, 2, 2)?;
        let (z, q) = (inputs[0], inputs[1]);
        if z.rank() != 2 || z.shape() != q.shape() {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("logits {:?} vs targets {:?}", z.shape(), q.shape()),
            ));
        }
        let c = z.shape()[1];
        let n = z.shape()[0];
        let mut total = 0.0;
        for (zr, qr) in z.data().chunks_exact(c).zip(q.data().chunks_exact(c)) {
            let lse = log_sum_exp(zr);
            total -= zr.iter().zip(qr).map(|(zv, qv)| qv * (zv - lse)).sum::<f64>();
        }
        Ok(Forward::new(Tensor::scalar(total / n as f64)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (z, q) = (cx.inputs[0], cx.inputs[1]);
        let (n, c) = (z.shape()[0], z.shape()[1]);
        let scale = cx.grad_output.item() / n as f64;
        let mut dz = vec![0.0; z.numel()];
        let mut p = vec![0.0; c];
        for ((zr, qr), dr) in z
            .data()
            .chunks_exact(c)
            .zip(q.data().chunks_exact(c))
            .zip(dz.chunks_exact_mut(c))
        {
            softmax_row(zr, &mut p);
            let mass: f64 = qr.iter().sum();
            for j in 0..c {
                dr[j] = scale * (p[j] * mass - qr[j]);
            }
        }
        Ok(vec![Some(Tensor::from_parts(z.shape().to_vec(), dz)), None])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        let (n, c) = (3, 4);
        let mut q = Tensor::uniform(vec![n, c], 0.05, 1.0, rng);
        for row in q.data_mut().chunks_exact_mut(c) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Fixture {
            inputs: vec![Tensor::randn(vec![n, c], 1.0, rng), q],
            attrs: Attrs::new(),
            differentiable: vec![true, false],
        }
    }
}
