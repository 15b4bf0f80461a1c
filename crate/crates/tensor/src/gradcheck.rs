//! Central-difference verification of backward rules.
//!
//! A non-scalar output `y` is reduced to `sum(r * y)` with a fixed
//! pseudo-random projection `r`, so every output entry contributes to the
//! checked gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::Result;
use crate::op::{BackwardCx, Operator};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const PROJECTION_SEED: u64 = 0x5eed_0f_9ad;

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn projection(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Outcome of a check: the worst relative error and where it occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheck {
    fn failed() -> Self {
        GradCheck {
            max_rel_error: f64::INFINITY,
            worst: None,
        }
    }

    fn record(&mut self, err: f64, at: (usize, usize)) {
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = Some(at);
        }
    }
}

/// Compares one operator's backward rule with central differences of
/// `step` on every entry of every differentiable input. Never fails: a
/// forward or backward error reports an infinite error.
pub fn grad_check(op: &dyn Operator, inputs: &[Tensor], attrs: &Attrs, differentiable: &[bool], step: f64) -> GradCheck {
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        Ok(op.forward(&refs, attrs)?.output)
    };
    let run = || -> Result<GradCheck> {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let fwd = op.forward(&refs, attrs)?;
        let r = projection(fwd.output.shape());
        let cx = BackwardCx {
            inputs: &refs,
            output: &fwd.output,
            saved: &fwd.saved,
            attrs,
            grad_output: &r,
            needs_grad: differentiable,
        };
        let analytic = op.backward(&cx)?;
        let mut report = GradCheck {
            max_rel_error: 0.0,
            worst: None,
        };
        let mut probe = inputs.to_vec();
        for (k, &diff) in differentiable.iter().enumerate() {
            if !diff {
                continue;
            }
            let Some(a) = analytic.get(k).cloned().flatten() else {
                report.record(f64::INFINITY, (k, 0));
                continue;
            };
            if a.shape() != inputs[k].shape() {
                report.record(f64::INFINITY, (k, 0));
                continue;
            }
            for e in 0..inputs[k].numel() {
                let orig = inputs[k].data()[e];
                probe[k].data_mut()[e] = orig + step;
                let plus = project(&eval(&probe)?, &r);
                probe[k].data_mut()[e] = orig - step;
                let minus = project(&eval(&probe)?, &r);
                probe[k].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                report.record(relative_error(a.data()[e], numeric), (k, e));
            }
        }
        Ok(report)
    };
    run().unwrap_or_else(|_| GradCheck::failed())
}

/// Same check for an arbitrary recorded computation. `build` receives one
/// trainable leaf per tensor in `inputs` and returns the output node.
pub fn grad_check_graph<F>(build: F, inputs: &[Tensor], step: f64) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    };
    let run = || -> Result<GradCheck> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = build(&mut tape, &vars)?;
        let r = projection(tape.value(out).shape());
        let rv = tape.constant(r.clone());
        let prod = tape.mul(out, rv)?;
        let loss = tape.sum_all(prod)?;
        tape.backward(loss)?;
        let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();

        let mut report = GradCheck {
            max_rel_error: 0.0,
            worst: None,
        };
        let mut probe = inputs.to_vec();
        for k in 0..inputs.len() {
            let a = analytic[k].clone().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
            for e in 0..inputs[k].numel() {
                let orig = inputs[k].data()[e];
                probe[k].data_mut()[e] = orig + step;
                let plus = project(&eval(&probe)?, &r);
                probe[k].data_mut()[e] = orig - step;
                let minus = project(&eval(&probe)?, &r);
                probe[k].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                report.record(relative_error(a.data()[e], numeric), (k, e));
            }
        }
        Ok(report)
    };
    run().unwrap_or_else(|_| GradCheck::failed())
}
