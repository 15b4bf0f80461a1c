#![allow(dead_code)]

use infosync_core::{Ctx, ModelParams, Result};
use infosync_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Value of `f(x)` for a single forward pass.
pub fn run(params: &ModelParams, training: bool, x: Tensor, f: impl FnOnce(&mut Ctx<'_>, Var) -> Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, params, training);
    let v = cx.input(x);
    let y = f(&mut cx, v).expect("forward");
    tape.value(y).clone()
}

pub fn zero_where(params: &mut ModelParams, pred: impl Fn(&str) -> bool) {
    let paths: Vec<String> = params.iter().map(|(p, _)| p.to_string()).filter(|p| pred(p)).collect();
    for p in paths {
        let t = params.get_mut(&p).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn set(params: &mut ModelParams, path: &str, values: &[f64]) {
    let t = params.get_mut(path).unwrap();
    assert_eq!(t.numel(), values.len(), "{path}");
    t.data_mut().copy_from_slice(values);
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Permutes axis 1 of a `[N, T, ...]` tensor: output row `t` is input row `perm[t]`.
pub fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let (n, t) = (s[0], s[1]);
    let inner = x.numel() / (n * t);
    let mut out = vec![0.0; x.numel()];
    for b in 0..n {
        for (i, &p) in perm.iter().enumerate() {
            let dst = (b * t + i) * inner;
            let src = (b * t + p) * inner;
            out[dst..dst + inner].copy_from_slice(&x.data()[src..src + inner]);
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}
