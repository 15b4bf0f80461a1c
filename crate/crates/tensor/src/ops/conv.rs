use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::conv::{conv_backward, conv_forward, ConvGeometry};
use crate::error::{Result, TensorError};
use crate::op::{arity, BackwardCx, Fixture, Forward, Operator};
use crate::tensor::Tensor;

/// Convolution over `axes` spatial axes (1, 2 or 3), channels-last, zero
/// padded. Inputs: `x [N, *spatial, Cin]`, `w [*kernel, Cin, Cout]` and an
/// optional bias `[Cout]`. Attributes: `stride`, `pad`, `dilation`, one entry
/// per spatial axis (stride and dilation default to 1, pad to 0).
pub struct Conv {
    name: &'static str,
    axes: usize,
}

impl Conv {
    pub fn conv1d() -> Self {
        Conv { name: "conv1d", axes: 1 }
    }

    pub fn conv2d() -> Self {
        Conv { name: "conv2d", axes: 2 }
    }

    pub fn conv3d() -> Self {
        Conv { name: "conv3d", axes: 3 }
    }

    pub fn geometry(&self, x: &Tensor, w: &Tensor, attrs: &Attrs) -> Result<ConvGeometry> {
        let ax = self.axes;
        if x.rank() != ax + 2 || w.rank() != ax + 2 {
            return Err(TensorError::shape(
                self.name,
                format!(
                    "expected rank-{} input and kernel, got {:?} and {:?}",
                    ax + 2,
                    x.shape(),
                    w.shape()
                ),
            ));
        }
        let cin = x.shape()[ax + 1];
        if w.shape()[ax] != cin {
            return Err(TensorError::shape(
                self.name,
                format!("input has {cin} channels, kernel {:?} expects {}", w.shape(), w.shape()[ax]),
            ));
        }
        let ones = vec![1; ax];
        let zeros = vec![0; ax];
        let stride = attrs.ints_or("stride", &ones);
        let pad = attrs.ints_or("pad", &zeros);
        let dilation = attrs.ints_or("dilation", &ones);
        for (key, v) in [("stride", stride), ("pad", pad), ("dilation", dilation)] {
            if v.len() != ax {
                return Err(TensorError::BadAttribute {
                    op: self.name.into(),
                    key: key.into(),
                });
            }
        }
        if dilation.contains(&0) || stride.contains(&0) {
            return Err(TensorError::shape(self.name, "stride and dilation must be >= 1"));
        }
        // Missing leading axes are extent-1 (no stride, no pad).
        let lift = |v: &[usize], fill: usize| {
            let mut out = [fill; 3];
            out[3 - ax..].copy_from_slice(v);
            out
        };
        let g = ConvGeometry {
            batch: x.shape()[0],
            input: lift(&x.shape()[1..=ax], 1),
            cin,
            kernel: lift(&w.shape()[..ax], 1),
            cout: w.shape()[ax + 1],
            stride: lift(stride, 1),
            pad: lift(pad, 0),
            dilation: lift(dilation, 1),
        };
        g.output().map_err(|e| match e {
            TensorError::ShapeMismatch { detail, .. } => TensorError::shape(self.name, detail),
            other => other,
        })?;
        Ok(g)
    }
}

impl Operator for Conv {
    fn name(&self) -> &'static str {
        self.name
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity(self.name, inputs, 2, 3)?;
        let (x, w) = (inputs[0], inputs[1]);
        let g = self.geometry(x, w, attrs)?;
        let bias = inputs.get(2).map(|b| b.data());
        if let Some(b) = bias {
            if b.len() != g.cout {
                return Err(TensorError::shape(
                    self.name,
                    format!("bias has {} values for {} output channels", b.len(), g.cout),
                ));
            }
        }
        let y = conv_forward(&g, x.data(), w.data(), bias)?;
        let out = g.output()?;
        let mut shape = vec![g.batch];
        shape.extend_from_slice(&out[3 - self.axes..]);
        shape.push(g.cout);
        Ok(Forward::new(Tensor::from_parts(shape, y)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (cx.inputs[0], cx.inputs[1]);
        let g = self.geometry(x, w, cx.attrs)?;
        let grads = conv_backward(&g, x.data(), w.data(), cx.grad_output.data(), cx.needs(0), cx.needs(1))?;
        let mut out = vec![
            grads.dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
            grads.dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        ];
        if cx.inputs.len() == 3 {
            out.push(cx.needs(2).then(|| Tensor::from_parts(cx.inputs[2].shape().to_vec(), grads.db)));
        }
        Ok(out)
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        let (x, w, attrs) = match self.axes {
            1 => {
                let k = [3, 5][rng.random_range(0..2)];
                let dil = rng.random_range(1..=2);
                (
                    Tensor::randn(vec![2, 7, 3], 1.0, rng),
                    Tensor::randn(vec![k, 3, 2], 0.5, rng),
                    Attrs::new()
                        .ints("dilation", &[dil])
                        .ints("pad", &[dil * (k - 1) / 2]),
                )
            }
            2 => (
                Tensor::randn(vec![2, 5, 6, 2], 1.0, rng),
                Tensor::randn(vec![3, 3, 2, 3], 0.5, rng),
                Attrs::new().ints("stride", &[2, 1]).ints("pad", &[1, 1]),
            ),
            _ => (
                Tensor::randn(vec![1, 3, 5, 5, 1], 1.0, rng),
                Tensor::randn(vec![3, 3, 3, 1, 2], 0.5, rng),
                Attrs::new().ints("stride", &[1, 2, 2]).ints("pad", &[1, 1, 1]),
            ),
        };
        let cout = *w.shape().last().unwrap();
        let b = Tensor::randn(vec![cout], 0.5, rng);
        Fixture::all(vec![x, w, b], attrs)
    }
}

/// Max pooling over the two spatial axes of `[N, H, W, C]`; padded cells
/// never win. Attributes: `kernel`, `stride`, `pad`, two entries each.
pub struct MaxPool2d;

struct PoolDims {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    k: [usize; 2],
    s: [usize; 2],
    p: [usize; 2],
}

impl MaxPool2d {
    fn dims(x: &Tensor, attrs: &Attrs) -> Result<PoolDims> {
        if x.rank() != 4 {
            return Err(TensorError::shape("max_pool2d", format!("expected rank 4, got {:?}", x.shape())));
        }
        let k = attrs.get_ints("max_pool2d", "kernel")?;
        let s = attrs.ints_or("stride", k);
        let p = attrs.ints_or("pad", &[0, 0]);
        if k.len() != 2 || s.len() != 2 || p.len() != 2 || s.contains(&0) || k.contains(&0) {
            return Err(TensorError::BadAttribute {
                op: "max_pool2d".into(),
                key: "kernel/stride/pad".into(),
            });
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        if k[0] > h + 2 * p[0] || k[1] > w + 2 * p[1] || p[0] >= k[0] || p[1] >= k[1] {
            return Err(TensorError::shape(
                "max_pool2d",
                format!("window {k:?} with pad {p:?} does not fit {h}x{w}"),
            ));
        }
        Ok(PoolDims {
            n: x.shape()[0],
            h,
            w,
            c: x.shape()[3],
            oh: (h + 2 * p[0] - k[0]) / s[0] + 1,
            ow: (w + 2 * p[1] - k[1]) / s[1] + 1,
            k: [k[0], k[1]],
            s: [s[0], s[1]],
            p: [p[0], p[1]],
        })
    }
}

impl Operator for MaxPool2d {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("max_pool2d", inputs, 1, 1)?;
        let x = inputs[0];
        let d = Self::dims(x, attrs)?;
        let xd = x.data();
        let len = d.n * d.oh * d.ow * d.c;
        let mut out = vec![f64::NEG_INFINITY; len];
        let mut arg = vec![0.0; len];
        for n in 0..d.n {
            for oh in 0..d.oh {
                for ow in 0..d.ow {
                    let o = ((n * d.oh + oh) * d.ow + ow) * d.c;
                    for a in 0..d.k[0] {
                        let ih = (oh * d.s[0] + a) as isize - d.p[0] as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        for b in 0..d.k[1] {
                            let iw = (ow * d.s[1] + b) as isize - d.p[1] as isize;
                            if iw < 0 || iw >= d.w as isize {
                                continue;
                            }
                            let i = ((n * d.h + ih as usize) * d.w + iw as usize) * d.c;
                            for c in 0..d.c {
                                if xd[i + c] > out[o + c] {
                                    out[o + c] = xd[i + c];
                                    arg[o + c] = (i + c) as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        let shape = vec![d.n, d.oh, d.ow, d.c];
        Ok(Forward::with_saved(
            Tensor::from_parts(shape.clone(), out),
            vec![Tensor::from_parts(shape, arg)],
        ))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = cx.inputs[0];
        let mut dx = vec![0.0; x.numel()];
        for (&i, &g) in cx.saved[0].data().iter().zip(cx.grad_output.data()) {
            dx[i as usize] += g;
        }
        Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        // Distinct values spaced well apart so no window has a near-tie.
        let shape = vec![2, 5, 5, 2];
        let mut order: Vec<usize> = (0..shape.iter().product()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut data = vec![0.0; order.len()];
        for (rank, &i) in order.iter().enumerate() {
            data[i] = rank as f64 * 0.05 - 2.0;
        }
        Fixture::all(
            vec![Tensor::from_parts(shape, data)],
            Attrs::new().ints("kernel", &[3, 3]).ints("stride", &[2, 2]).ints("pad", &[1, 1]),
        )
    }
}
