//! Built-in operators. Every tensor is channels-last: the trailing axis is
//! the feature/channel axis.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod shape;
mod softmax;

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::op::Operator;

pub use conv::{Conv, MaxPool2d};
pub use elementwise::{Add, Dropout, Mul, Prelu, Relu, Scale, Sigmoid};
pub use linalg::{Linear, Matmul};
pub use norm::{BatchNorm, LayerNorm};
pub use shape::{Concat, Mean, Permute, Reshape};
pub use softmax::{log_sum_exp, softmax_row, CrossEntropy, Softmax};

/// The full built-in inventory.
pub fn builtin() -> Vec<Arc<dyn Operator>> {
    vec![
        Arc::new(Conv::conv1d()),
        Arc::new(Conv::conv2d()),
        Arc::new(Conv::conv3d()),
        Arc::new(MaxPool2d),
        Arc::new(Matmul),
        Arc::new(Linear),
        Arc::new(Add),
        Arc::new(Mul),
        Arc::new(Scale),
        Arc::new(Relu),
        Arc::new(Prelu),
        Arc::new(Sigmoid),
        Arc::new(Dropout),
        Arc::new(Concat),
        Arc::new(Reshape),
        Arc::new(Permute),
        Arc::new(Mean),
        Arc::new(Softmax),
        Arc::new(LayerNorm),
        Arc::new(BatchNorm),
        Arc::new(CrossEntropy),
    ]
}

/// `b` broadcast against `a`: `a` viewed as `[outer, mid, inner]` and `b`
/// as `[outer, inner]`. `b` may have lower rank (left-padded with ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Broadcast {
    pub outer: usize,
    pub mid: usize,
    pub inner: usize,
}

impl Broadcast {
    pub fn plan(op: &str, a: &[usize], b: &[usize]) -> Result<Self> {
        if b.len() > a.len() {
            return Err(TensorError::shape(op, format!("cannot broadcast {b:?} onto {a:?}")));
        }
        let mut padded = vec![1; a.len() - b.len()];
        padded.extend_from_slice(b);
        let differing: Vec<usize> = (0..a.len()).filter(|&i| padded[i] != a[i]).collect();
        if differing.iter().any(|&i| padded[i] != 1) {
            return Err(TensorError::shape(op, format!("cannot broadcast {b:?} onto {a:?}")));
        }
        let numel: usize = a.iter().product();
        let (Some(&lo), Some(&hi)) = (differing.first(), differing.last()) else {
            return Ok(Broadcast {
                outer: 1,
                mid: 1,
                inner: numel,
            });
        };
        if (lo..=hi).any(|i| padded[i] != 1) {
            return Err(TensorError::shape(
                op,
                format!("broadcast axes of {b:?} onto {a:?} must be contiguous"),
            ));
        }
        Ok(Broadcast {
            outer: a[..lo].iter().product(),
            mid: a[lo..=hi].iter().product(),
            inner: a[hi + 1..].iter().product(),
        })
    }

    /// Calls `f(a_index, b_index)` for every element of `a`.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let mut ai = 0;
        for o in 0..self.outer {
            for _ in 0..self.mid {
                let bi = o * self.inner;
                for i in 0..self.inner {
                    f(ai, bi + i);
                    ai += 1;
                }
            }
        }
    }
}
