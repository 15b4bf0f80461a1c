use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Broadcast;
use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::{arity, BackwardCx, Fixture, Forward, Operator};
use crate::tensor::Tensor;

/// `a + b`, with `b` broadcast over a contiguous block of `a`'s axes.
pub struct Add;

impl Operator for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("add", inputs, 2, 2)?;
        let (a, b) = (inputs[0], inputs[1]);
        let plan = Broadcast::plan("add", a.shape(), b.shape())?;
        let mut out = a.data().to_vec();
        let bd = b.data();
        plan.for_each(|ai, bi| out[ai] += bd[bi]);
        Ok(Forward::new(Tensor::from_parts(a.shape().to_vec(), out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (cx.inputs[0], cx.inputs[1]);
        let g = cx.grad_output;
        let db = cx.needs(1).then(|| {
            let plan = Broadcast::plan("add", a.shape(), b.shape()).expect("checked in forward");
            let mut db = vec![0.0; b.numel()];
            let gd = g.data();
            plan.for_each(|ai, bi| db[bi] += gd[ai]);
            Tensor::from_parts(b.shape().to_vec(), db)
        });
        Ok(vec![cx.needs(0).then(|| g.clone()), db])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![Tensor::randn(vec![2, 3, 4], 1.0, rng), Tensor::randn(vec![2, 1, 4], 1.0, rng)],
            Attrs::new(),
        )
    }
}

/// Elementwise `a * b`, broadcasting like [`Add`].
pub struct Mul;

impl Operator for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("mul", inputs, 2, 2)?;
        let (a, b) = (inputs[0], inputs[1]);
        let plan = Broadcast::plan("mul", a.shape(), b.shape())?;
        let mut out = a.data().to_vec();
        let bd = b.data();
        plan.for_each(|ai, bi| out[ai] *= bd[bi]);
        Ok(Forward::new(Tensor::from_parts(a.shape().to_vec(), out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (cx.inputs[0], cx.inputs[1]);
        let plan = Broadcast::plan("mul", a.shape(), b.shape())?;
        let (ad, bd, gd) = (a.data(), b.data(), cx.grad_output.data());
        let da = cx.needs(0).then(|| {
            let mut da = vec![0.0; a.numel()];
            plan.for_each(|ai, bi| da[ai] = gd[ai] * bd[bi]);
            Tensor::from_parts(a.shape().to_vec(), da)
        });
        let db = cx.needs(1).then(|| {
            let mut db = vec![0.0; b.numel()];
            plan.for_each(|ai, bi| db[bi] += gd[ai] * ad[ai]);
            Tensor::from_parts(b.shape().to_vec(), db)
        });
        Ok(vec![da, db])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![Tensor::randn(vec![3, 2, 5], 1.0, rng), Tensor::randn(vec![3, 1, 5], 1.0, rng)],
            Attrs::new(),
        )
    }
}

/// Multiplication by the constant attribute `factor`.
pub struct Scale;

impl Operator for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("scale", inputs, 1, 1)?;
        let k = attrs.get_float("scale", "factor")?;
        Ok(Forward::new(inputs[0].map(|x| x * k)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let k = cx.attrs.get_float("scale", "factor")?;
        Ok(vec![Some(cx.grad_output.map(|g| g * k))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(vec![Tensor::randn(vec![4, 3], 1.0, rng)], Attrs::new().float("factor", -0.7))
    }
}

pub struct Relu;

impl Operator for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("relu", inputs, 1, 1)?;
        Ok(Forward::new(inputs[0].map(|x| x.max(0.0))))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = cx.inputs[0];
        let data = x
            .data()
            .iter()
            .zip(cx.grad_output.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), data))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(vec![away_from_zero(vec![3, 7], rng)], Attrs::new())
    }
}

/// Parametric ReLU: `x` for `x > 0`, `slope * x` otherwise. The slope is a
/// single learnable value or one per channel.
pub struct Prelu;

impl Prelu {
    fn channels(x: &Tensor, slope: &Tensor) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&1);
        match slope.numel() {
            1 => Ok(1),
            n if n == c => Ok(c),
            n => Err(TensorError::shape(
                "prelu",
                format!("slope has {n} values, input has {c} channels"),
            )),
        }
    }
}

impl Operator for Prelu {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("prelu", inputs, 2, 2)?;
        let (x, s) = (inputs[0], inputs[1]);
        let c = Self::channels(x, s)?;
        let sd = s.data();
        let out = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { sd[i % c] * v })
            .collect();
        Ok(Forward::new(Tensor::from_parts(x.shape().to_vec(), out)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, s) = (cx.inputs[0], cx.inputs[1]);
        let c = Self::channels(x, s)?;
        let (xd, sd, gd) = (x.data(), s.data(), cx.grad_output.data());
        let mut dx = vec![0.0; x.numel()];
        let mut ds = vec![0.0; s.numel()];
        for i in 0..xd.len() {
            if xd[i] > 0.0 {
                dx[i] = gd[i];
            } else {
                dx[i] = gd[i] * sd[i % c];
                ds[i % c] += gd[i] * xd[i];
            }
        }
        Ok(vec![
            Some(Tensor::from_parts(x.shape().to_vec(), dx)),
            Some(Tensor::from_parts(s.shape().to_vec(), ds)),
        ])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(
            vec![away_from_zero(vec![4, 3], rng), Tensor::new(vec![3], vec![0.25, -0.4, 0.6]).unwrap()],
            Attrs::new(),
        )
    }
}

pub struct Sigmoid;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Operator for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor], _: &Attrs) -> Result<Forward> {
        arity("sigmoid", inputs, 1, 1)?;
        Ok(Forward::new(inputs[0].map(sigmoid)))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let y = cx.output;
        let data = y
            .data()
            .iter()
            .zip(cx.grad_output.data())
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect();
        Ok(vec![Some(Tensor::from_parts(y.shape().to_vec(), data))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        Fixture::all(vec![Tensor::randn(vec![2, 6], 2.0, rng)], Attrs::new())
    }
}

/// Inverted dropout with a mask drawn from the `seed` attribute, so a fixed
/// seed gives a fixed, differentiable map.
pub struct Dropout;

impl Operator for Dropout {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward> {
        arity("dropout", inputs, 1, 1)?;
        let p = attrs.get_float("dropout", "p")?;
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadAttribute {
                op: "dropout".into(),
                key: "p".into(),
            });
        }
        let seed = attrs.get_int("dropout", "seed")? as u64;
        let x = inputs[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let mask = Tensor::from_parts(x.shape().to_vec(), mask);
        Ok(Forward::with_saved(Tensor::from_parts(x.shape().to_vec(), out), vec![mask]))
    }

    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>> {
        let mask = &cx.saved[0];
        let data = mask.data().iter().zip(cx.grad_output.data()).map(|(m, g)| m * g).collect();
        Ok(vec![Some(Tensor::from_parts(mask.shape().to_vec(), data))])
    }

    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture {
        let seed = rng.random_range(0..1_000_000);
        Fixture::all(
            vec![Tensor::randn(vec![4, 5], 1.0, rng)],
            Attrs::new().float("p", 0.3).int("seed", seed),
        )
    }
}

/// Random values with magnitude in `[0.1, 1.1)`, random sign: safe for
/// finite differences across a kink at zero.
pub(crate) fn away_from_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.1);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_parts(shape, data)
}
