use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::op::{arity, BackwardCx, Fixture, Forward, Operator};
use crate::tensor::Tensor;

/// Batched matrix product over the trailing two axes. `b` is either a plain
/// matrix shared by every batch entry or carries the same batch axes as `a`.
/// Attributes `trans_a` / `trans_b` transpose the operands.
pub struct Matmul;

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
    out_shape: Vec<usize>,
}

impl Matmul {
    fn dims(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<MatmulDims> {
        let (ra, rb) = (a.rank(), b.rank());
        if ra < 2 || rb < 2 {
            return Err(TensorError::shape(
                "matmul",
                format!("operands must be at least rank 2, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        let (sa, sb) = (a.shape(), b.shape());
        let (m, ka) = if ta { (sa[ra - 1], sa[ra - 2]) } else { (sa[ra - 2], sa[ra - 1]) };
        let (kb, n) = if tb { (sb[rb - 1], sb[rb - 2]) } else { (sb[rb - 2], sb[rb - 1]) };
        if ka != kb {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dimensions differ: {ka} vs {kb} ({sa:?} x {sb:?})"),
            ));
        }
        let shared_b = rb == 2;
        if !shared_b && sa[..ra - 2] != sb[..rb - 2] {
            return Err(TensorError::shape(
                "matmul",
                format!("batch axes differ: {sa:?} vs {sb:?}"),
            ));
        }
        let mut out_shape = sa[..ra - 2].to_vec();
        out_shape.extend([m, n]);
        Ok(MatmulDims {
            batch: sa[..ra - 2].iter().product(),
            m,
            k: ka,
            n,
            shared_b,
            out_shape,
        })
    }
}

impl Operator for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("matmul", inputs, 2, 2)?;
        let (ta, tb) = (attrs.flag_or("trans_a", false), attrs.flag_or("trans_b", false));
        let (a, b) = (inputs[0], inputs[1]);
        let d = Self::dims(a, b, ta, tb)?;
        let (sa, sb, sc) = (d.m * d.k, if d.shared_b { 0 } else { d.k * d.n }, d.m * d.n);
        let mut out = vec![0.0; d.batch * sc];
        for i in 0..d.batch {
            gemm(
                d.m,
                d.k,
                d.n,
                &a.data()[i * sa..],
                ta,
                &b.data()[i * sb..],
                tb,
                &mut out[i * sc..(i + 1) * sc],
                false,
            );
        }
        Ok(Forward::new(Tensor::from_parts(d.out_shape, out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (ta, tb) = (cx.attrs.flag_or("trans_a", false), cx.attrs.flag_or("trans_b", false));
        let (a, b) = (cx.inputs[0], cx.inputs[1]);
        let d = Self::dims(a, b, ta, tb)?;
        let (m, k, n) = (d.m, d.k, d.n);
        let (sa, sb, sc) = (m * k, if d.shared_b { 0 } else { k * n }, m * n);
        let (ad, bd, gd) = (a.data(), b.data(), cx.grad_output.data());
        let da = cx.needs(0).then(|| {
            let mut da = vec![0.0; a.numel()];
            for i in 0..d.batch {
                let (bi, gi, dai) = (&bd[i * sb..], &gd[i * sc..], &mut da[i * sa..(i + 1) * sa]);
                match (ta, tb) {
                    (false, false) => gemm(m, n, k, gi, false, bi, true, dai, false),
                    (false, true) => gemm(m, n, k, gi, false, bi, false, dai, false),
                    (true, false) => gemm(k, n, m, bi, false, gi, true, dai, false),
                    (true, true) => gemm(k, n, m, bi, true, gi, true, dai, false),
                }
            }
            Tensor::from_parts(a.shape().to_vec(), da)
        });
        let db = cx.needs(1).then(|| {
            let mut db = vec![0.0; b.numel()];
            for i in 0..d.batch {
                let (ai, gi) = (&ad[i * sa..], &gd[i * sc..]);
                let off = if d.shared_b { 0 } else { i * k * n };
                let dbi = &mut db[off..off + k * n];
                let acc = d.shared_b;
                match (ta, tb) {
                    (false, false) => gemm(k, m, n, ai, true, gi, false, dbi, acc),
                    (true, false) => gemm(k, m, n, ai, false, gi, false, dbi, acc),
                    (false, true) => gemm(n, m, k, gi, true, ai, false, dbi, acc),
                    (true, true) => gemm(n, m, k, gi, true, ai, true, dbi, acc),
                }
            }
            Tensor::from_parts(b.shape().to_vec(), db)
        });
        Ok(vec![da, db])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        let ta = rng.random::<bool>();
        let tb = rng.random::<bool>();
        let shared = rng.random::<bool>();
        let (m, k, n) = (3, 4, 2);
        let a_shape = if ta { vec![2, k, m] } else { vec![2, m, k] };
        let mut b_shape = if tb { vec![n, k] } else { vec![k, n] };
        if !shared {
            b_shape.insert(0, 2);
        }
        Fixture::all(
            vec![Tensor::randn(a_shape, 1.0, rng), Tensor::randn(b_shape, 1.0, rng)],
            Attrs::new().flag("trans_a", ta).flag("trans_b", tb),
        )
    }
}

/// Affine map over the trailing axis: `x W + b`, `W` is `[in, out]`.
pub struct Linear;

impl Linear {
    fn check(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize)> {
        let fan_in = *x.shape().last().unwrap_or(&0);
        if w.rank() != 2 || w.shape()[0] != fan_in {
            return Err(TensorError::shape(
                "linear",
                format!("input {:?} vs weight {:?}", x.shape(), w.shape()),
            ));
        }
        let fan_out = w.shape()[1];
        if let Some(b) = b {
            if b.numel() != fan_out {
                return Err(TensorError::shape(
                    "linear",
                    format!("bias {:?} vs {fan_out} outputs", b.shape()),
                ));
            }
        }
        Ok((x.numel() / fan_in, fan_in, fan_out))
    }
}

impl Operator for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("linear", inputs, 2, 3)?;
        let (x, w, b) = (inputs[0], inputs[1], inputs.get(2).copied());
        let (rows, fi, fo) = Self::check(x, w, b)?;
        let mut out = vec![0.0; rows * fo];
        gemm(rows, fi, fo, x.data(), false, w.data(), false, &mut out, false);
        if let Some(b) = b {
            for row in out.chunks_exact_mut(fo) {
                for (v, bb) in row.iter_mut().zip(b.data()) {
                    *v += bb;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fo;
        Ok(Forward::new(Tensor::from_parts(shape, out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (cx.inputs[0], cx.inputs[1]);
        let (rows, fi, fo) = Self::check(x, w, cx.inputs.get(2).copied())?;
        let g = cx.grad_output.data();
        let dx = cx.needs(0).then(|| {
            let mut dx = vec![0.0; x.numel()];
            gemm(rows, fo, fi, g, false, w.data(), true, &mut dx, false);
            Tensor::from_parts(x.shape().to_vec(), dx)
        });
        let dw = cx.needs(1).then(|| {
            let mut dw = vec![0.0; fi * fo];
            gemm(fi, rows, fo, x.data(), true, g, false, &mut dw, false);
            Tensor::from_parts(w.shape().to_vec(), dw)
        });
        let mut grads = vec![dx, dw];
        if cx.inputs.len() == 3 {
            let db = cx.needs(2).then(|| {
                let mut db = vec![0.0; fo];
                for row in g.chunks_exact(fo) {
                    for (s, v) in db.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                Tensor::from_parts(cx.inputs[2].shape().to_vec(), db)
            });
            grads.push(db);
        }
        Ok(grads)
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![
                Tensor::randn(vec![2, 3, 4], 1.0, rng),
                Tensor::randn(vec![4, 5], 0.5, rng),
                Tensor::randn(vec![5], 0.5, rng),
            ],
            Attrs::new(),
        )
    }
}
