//! The operator contract shared by every differentiable kernel.

use rand_chacha::ChaCha8Rng;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Result of a forward evaluation: the output plus whatever the backward
/// rule wants kept around.
pub struct Forward {
    pub output: Tensor,
    pub saved: Vec<Tensor>,
}

impl Forward {
    pub fn new(output: Tensor) -> Self {
        Forward {
            output,
            saved: Vec::new(),
        }
    }

    pub fn with_saved(output: Tensor, saved: Vec<Tensor>) -> Self {
        Forward { output, saved }
    }
}

/// Everything a backward rule can read.
pub struct BackwardCx<'a> {
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    pub saved: &'a [Tensor],
    pub attrs: &'a Attrs,
    pub grad_output: &'a Tensor,
    /// Which inputs need a gradient. Rules may return `None` for the others.
    pub needs_grad: &'a [bool],
}

impl BackwardCx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs_grad.get(i).copied().unwrap_or(false)
    }
}

/// A sample problem for finite-difference checking of one operator.
pub struct Fixture {
    pub inputs: Vec<Tensor>,
    pub attrs: Attrs,
    /// Inputs the operator is differentiable in (labels and running
    /// statistics are not).
    pub differentiable: Vec<bool>,
}

impl Fixture {
    pub fn all(inputs: Vec<Tensor>, attrs: Attrs) -> Self {
        let differentiable = vec![true; inputs.len()];
        Fixture {
            inputs,
            attrs,
            differentiable,
        }
    }
}

/// One entry of the operator inventory: a forward kernel with its
/// registered backward rule.
pub trait Operator: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor], attrs: &Attrs) -> Result<Forward>;

    /// Vector-Jacobian product: one entry per input.
    fn backward(&self, cx: &BackwardCx<'_>) -> Result<Vec<Option<Tensor>>>;

    /// A random, well-conditioned instance for gradient checking.
    fn fixture(&self, rng: &mut ChaCha8Rng) -> Fixture;
}

pub(crate) fn arity(op: &str, inputs: &[&Tensor], lo: usize, hi: usize) -> Result<()> {
    if inputs.len() < lo || inputs.len() > hi {
        let expected = if lo == hi {
            lo.to_string()
        } else {
            format!("{lo}..={hi}")
        };
        return Err(TensorError::Arity {
            op: op.to_string(),
            expected,
            got: inputs.len(),
        });
    }
    Ok(())
}
