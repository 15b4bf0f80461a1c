use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::Operator;
use crate::ops;
use crate::tensor::Tensor;

/// Operators addressable by name.
#[derive(Clone, Default)]
pub struct OpRegistry {
    ops: BTreeMap<&'static str, Arc<dyn Operator>>,
}

impl OpRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the full built-in inventory.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for op in ops::builtin() {
            r.register(op);
        }
        r
    }

    /// Adds `op`, returning any operator it replaced under the same name.
    pub fn register(&mut self, op: Arc<dyn Operator>) -> Option<Arc<dyn Operator>> {
        self.ops.insert(op.name(), op)
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Operator>> {
        self.ops
            .get(name)
            .ok_or_else(|| TensorError::UnknownOperator(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.ops.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Process-wide shared instance of [`OpRegistry::standard`].
pub fn standard_registry() -> Arc<OpRegistry> {
    static STANDARD: OnceLock<Arc<OpRegistry>> = OnceLock::new();
    STANDARD.get_or_init(|| Arc::new(OpRegistry::standard())).clone()
}

/// Evaluates one operator by name without recording it.
pub fn forward_op(registry: &OpRegistry, op: &str, inputs: &[&Tensor], attrs: &Attrs) -> Result<Tensor> {
    Ok(registry.get(op)?.forward(inputs, attrs)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_operator_is_an_error() {
        let r = OpRegistry::standard();
        let x = Tensor::scalar(1.0);
        let err = forward_op(&r, "conv4d", &[&x], &Attrs::new()).unwrap_err();
        assert_eq!(err, TensorError::UnknownOperator("conv4d".into()));
    }

    #[test]
    fn inventory_is_complete() {
        let r = OpRegistry::standard();
        for name in [
            "conv3d", "conv2d", "conv1d", "matmul", "add", "concat", "softmax", "layer_norm",
            "batch_norm", "relu", "prelu", "sigmoid", "mul", "mean", "linear", "scale",
        ] {
            assert!(r.get(name).is_ok(), "{name} missing");
        }
    }
}
