use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::{BackwardCx, Fixture, Forward, Operator};
use crate::tensor::{strides, Tensor};

/// Concatenation along the trailing (channel) axis.
pub struct Concat;

impl Concat {
    fn widths(inputs: &[&Tensor]) -> Result<(Vec<usize>, usize)> {
        let first = inputs.first().ok_or_else(|| TensorError::Arity {
            op: "concat".into(),
            expected: ">= 1".into(),
            got: 0,
        })?;
        let lead = &first.shape()[..first.rank() - 1];
        let mut widths = Vec::with_capacity(inputs.len());
        for t in inputs {
            if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
                return Err(TensorError::shape(
                    "concat",
                    format!("leading axes differ: {:?} vs {:?}", first.shape(), t.shape()),
                ));
            }
            widths.push(*t.shape().last().unwrap());
        }
        Ok((widths, lead.iter().product()))
    }
}

impl Operator for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        let (widths, rows) = Self::widths(inputs)?;
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (t, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = inputs[0].shape().to_vec();
        *shape.last_mut().unwrap() = total;
        Ok(Forward::new(Tensor::from_parts(shape, out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (widths, rows) = Self::widths(cx.inputs)?;
        let total: usize = widths.iter().sum();
        let g = cx.grad_output.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            if cx.needs(i) {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                grads.push(Some(Tensor::from_parts(cx.inputs[i].shape().to_vec(), d)));
            } else {
                grads.push(None);
            }
            offset += w;
        }
        Ok(grads)
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![
                Tensor::randn(vec![2, 3, 2], 1.0, rng),
                Tensor::randn(vec![2, 3, 4], 1.0, rng),
                Tensor::randn(vec![2, 3, 1], 1.0, rng),
            ],
            Attrs::new(),
        )
    }
}

/// Reinterprets the data under the `shape` attribute.
pub struct Reshape;

impl Operator for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        crate::op::arity("reshape", inputs, 1, 1)?;
        let shape = attrs.get_ints("reshape", "shape")?;
        Ok(Forward::new(inputs[0].clone().reshape(shape.to_vec())?))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(cx.grad_output.clone().reshape(cx.inputs[0].shape().to_vec())?)])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![Tensor::randn(vec![2, 6], 1.0, rng)],
            Attrs::new().ints("shape", &[3, 2, 2]),
        )
    }
}

/// Axis permutation: output axis `i` is input axis `axes[i]`.
pub struct Permute;

/// Visits every index of `shape` in row-major order, passing the offset
/// obtained with `src_strides`.
fn walk(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for lin in 0..n {
        f(lin, src);
        for a in (0..rank).rev() {
            idx[a] += 1;
            src += src_strides[a];
            if idx[a] < shape[a] {
                break;
            }
            src -= src_strides[a] * shape[a];
            idx[a] = 0;
        }
    }
}

impl Permute {
    fn check(x: &Tensor, axes: &[usize]) -> Result<()> {
        let mut seen = vec![false; x.rank()];
        if axes.len() != x.rank() {
            return Err(TensorError::shape("permute", format!("axes {axes:?} for shape {:?}", x.shape())));
        }
        for &a in axes {
            if a >= x.rank() || seen[a] {
                return Err(TensorError::shape("permute", format!("axes {axes:?} is not a permutation")));
            }
            seen[a] = true;
        }
        Ok(())
    }

    fn apply(x: &Tensor, axes: &[usize]) -> Tensor {
        let st = strides(x.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
        let mut out = vec![0.0; x.numel()];
        let xd = x.data();
        walk(&out_shape, &src_strides, |o, s| out[o] = xd[s]);
        Tensor::from_parts(out_shape, out)
    }
}

impl Operator for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        crate::op::arity("permute", inputs, 1, 1)?;
        let axes = attrs.get_ints("permute", "axes")?;
        Self::check(inputs[0], axes)?;
        Ok(Forward::new(Self::apply(inputs[0], axes)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let axes = cx.attrs.get_ints("permute", "axes")?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(vec![Some(Self::apply(cx.grad_output, &inverse))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![Tensor::randn(vec![2, 3, 4], 1.0, rng)],
            Attrs::new().ints("axes", &[1, 2, 0]),
        )
    }
}

/// Arithmetic mean over the `axes` attribute; reduced axes are dropped
/// (a full reduction yields shape `[1]`). Exactly invariant under any
/// permutation of the reduced elements.
pub struct Mean;

impl Mean {
    fn plan(x: &Tensor, axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>, usize)> {
        let rank = x.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank || reduced[a] {
                return Err(TensorError::shape("mean", format!("bad axes {axes:?} for {:?}", x.shape())));
            }
            reduced[a] = true;
        }
        let kept: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).map(|a| x.shape()[a]).collect();
        let kept_strides = strides(&kept);
        // Stride into the output for each input axis (zero when reduced).
        let mut out_strides = vec![0; rank];
        let mut k = 0;
        for a in 0..rank {
            if !reduced[a] {
                out_strides[a] = kept_strides[k];
                k += 1;
            }
        }
        let count = axes.iter().map(|&a| x.shape()[a]).product();
        let out_shape = if kept.is_empty() { vec![1] } else { kept };
        Ok((out_shape, out_strides, count))
    }
}

impl Operator for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        crate::op::arity("mean", inputs, 1, 1)?;
        let x = inputs[0];
        let (out_shape, out_strides, count) = Self::plan(x, attrs.get_ints("mean", "axes")?)?;
        let n_out: usize = out_shape.iter().product();
        let xd = x.data();
        let mut groups = vec![0.0; n_out * count];
        let mut fill = vec![0usize; n_out];
        walk(x.shape(), &out_strides, |i, o| {
            groups[o * count + fill[o]] = xd[i];
            fill[o] += 1;
        });
        // Summing in sorted order makes the result independent of the
        // arrangement of the reduced elements.
        let inv = 1.0 / count as f64;
        let out = groups
            .chunks_exact_mut(count.max(1))
            .map(|g| {
                g.sort_unstable_by(f64::total_cmp);
                g.iter().sum::<f64>() * inv
            })
            .collect();
        Ok(Forward::new(Tensor::from_parts(out_shape, out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = cx.inputs[0];
        let (_, out_strides, count) = Self::plan(x, cx.attrs.get_ints("mean", "axes")?)?;
        let inv = 1.0 / count as f64;
        let g = cx.grad_output.data();
        let mut dx = vec![0.0; x.numel()];
        walk(x.shape(), &out_strides, |i, o| dx[i] = g[o] * inv);
        Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        let axes: &[usize] = [&[1usize, 2][..], &[0, 2], &[1]][rng.random_range(0..3)];
        Fixture::all(vec![Tensor::randn(vec![2, 3, 4, 2], 1.0, rng)], Attrs::new().ints("axes", axes))
    }
}
