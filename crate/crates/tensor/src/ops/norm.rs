use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::{arity, BackwardCx, Fixture, Forward, Operator};
use crate::tensor::Tensor;

const DEFAULT_EPS: f64 = 1e-5;

fn check_affine(op: &str, c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.numel() != c || beta.numel() != c {
        return Err(TensorError::shape(
            op,
            format!("{c} channels but scale {:?} / shift {:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Normalization over the trailing axis with learned scale and shift.
pub struct LayerNorm;

impl Operator for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("layer_norm", inputs, 3, 3)?;
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        let d = *x.shape().last().unwrap();
        check_affine("layer_norm", d, gamma, beta)?;
        let eps = attrs.float_or("eps", DEFAULT_EPS);
        let rows = x.numel() / d;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        let (gd, bd) = (gamma.data(), beta.data());
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        Ok(Forward::with_saved(
            Tensor::from_parts(x.shape().to_vec(), out),
            vec![
                Tensor::from_parts(x.shape().to_vec(), xhat),
                Tensor::from_parts(vec![rows], inv_std),
            ],
        ))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, gamma) = (cx.inputs[0], cx.inputs[1]);
        let d = *x.shape().last().unwrap();
        let rows = x.numel() / d;
        let (xhat, inv_std) = (cx.saved[0].data(), cx.saved[1].data());
        let (g, gd) = (cx.grad_output.data(), gamma.data());
        let mut dx = vec![0.0; x.numel()];
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for r in 0..rows {
            let (gr, hr) = (&g[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
            let mut sum_g = 0.0;
            let mut sum_gh = 0.0;
            for j in 0..d {
                let gg = gr[j] * gd[j];
                sum_g += gg;
                sum_gh += gg * hr[j];
                dgamma[j] += gr[j] * hr[j];
                dbeta[j] += gr[j];
            }
            let k = inv_std[r] / d as f64;
            for j in 0..d {
                let gg = gr[j] * gd[j];
                dx[r * d + j] = k * (d as f64 * gg - sum_g - hr[j] * sum_gh);
            }
        }
        Ok(vec![
            cx.needs(0).then(|| Tensor::from_parts(x.shape().to_vec(), dx)),
            cx.needs(1).then(|| Tensor::from_parts(gamma.shape().to_vec(), dgamma)),
            cx.needs(2).then(|| Tensor::from_parts(cx.inputs[2].shape().to_vec(), dbeta)),
        ])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![
                Tensor::randn(vec![4, 16], 1.0, rng),
                Tensor::randn(vec![16], 1.0, rng),
                Tensor::randn(vec![16], 1.0, rng),
            ],
            Attrs::new(),
        )
    }
}

/// Batch normalization over every axis but the trailing channel axis.
///
/// Inputs: `x`, `gamma`, `beta`, then `running_mean` and `running_var`
/// (required when the `training` attribute is false). Training mode
/// normalizes with batch statistics and saves `[xhat, mean, var, inv_std]`
/// so the caller can update its running averages.
pub struct BatchNorm;

impl Operator for BatchNorm {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("batch_norm", inputs, 3, 5)?;
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        let c = *x.shape().last().unwrap();
        check_affine("batch_norm", c, gamma, beta)?;
        let eps = attrs.float_or("eps", DEFAULT_EPS);
        let training = attrs.flag_or("training", true);
        let rows = x.numel() / c;
        let xd = x.data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            for px in xd.chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for px in xd.chunks_exact(c) {
                for j in 0..c {
                    let dv = px[j] - mean[j];
                    var[j] += dv * dv;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            (mean, var)
        } else {
            if inputs.len() != 5 {
                return Err(TensorError::Arity {
                    op: "batch_norm".into(),
                    expected: "5 in evaluation mode".into(),
                    got: inputs.len(),
                });
            }
            check_affine("batch_norm", c, inputs[3], inputs[4])?;
            (inputs[3].data().to_vec(), inputs[4].data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for (i, v) in xd.iter().enumerate() {
            let j = i % c;
            let h = (v - mean[j]) * inv_std[j];
            xhat[i] = h;
            out[i] = gd[j] * h + bd[j];
        }
        Ok(Forward::with_saved(
            Tensor::from_parts(x.shape().to_vec(), out),
            vec![
                Tensor::from_parts(x.shape().to_vec(), xhat),
                Tensor::from_parts(vec![c], mean),
                Tensor::from_parts(vec![c], var),
                Tensor::from_parts(vec![c], inv_std),
            ],
        ))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, gamma) = (cx.inputs[0], cx.inputs[1]);
        let c = *x.shape().last().unwrap();
        let rows = x.numel() / c;
        let training = cx.attrs.flag_or("training", true);
        let (xhat, inv_std) = (cx.saved[0].data(), cx.saved[3].data());
        let (g, gd) = (cx.grad_output.data(), gamma.data());
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
            dgamma[i % c] += gv * h;
            dbeta[i % c] += gv;
        }
        let dx = cx.needs(0).then(|| {
            let mut dx = vec![0.0; x.numel()];
            if training {
                let m = rows as f64;
                for (i, d) in dx.iter_mut().enumerate() {
                    let j = i % c;
                    *d = gd[j] * inv_std[j] / m * (m * g[i] - dbeta[j] - xhat[i] * dgamma[j]);
                }
            } else {
                for (i, d) in dx.iter_mut().enumerate() {
                    let j = i % c;
                    *d = g[i] * gd[j] * inv_std[j];
                }
            }
            Tensor::from_parts(x.shape().to_vec(), dx)
        });
        let mut out = vec![
            dx,
            cx.needs(1).then(|| Tensor::from_parts(gamma.shape().to_vec(), dgamma)),
            cx.needs(2).then(|| Tensor::from_parts(cx.inputs[2].shape().to_vec(), dbeta)),
        ];
        out.resize(cx.inputs.len(), None);
        Ok(out)
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![
                Tensor::randn(vec![3, 4, 5], 1.0, rng),
                Tensor::randn(vec![5], 1.0, rng),
                Tensor::randn(vec![5], 1.0, rng),
            ],
            Attrs::new().flag("training", true),
        )
    }
}
