//! Recording graph for reverse-mode differentiation.
//!
//! Nodes live in an append-only arena; an operator's inputs are always
//! earlier nodes, so reverse index order is a valid topological order.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::attrs::Attrs;
use crate::error::{Result, TensorError};
use crate::op::{BackwardCx, Operator};
use crate::registry::{standard_registry, OpRegistry};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Option<Arc<dyn Operator>>,
    inputs: Vec<Var>,
    attrs: Attrs,
    saved: Vec<Tensor>,
    requires_grad: bool,
    trainable: bool,
    path: Option<String>,
    grad: Option<Tensor>,
}

/// Gradients of named trainable leaves after [`Tape::backward`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Gradients {
    pub by_path: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.by_path.get(path)
    }
}

pub struct Tape {
    registry: Arc<OpRegistry>,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_registry(standard_registry())
    }

    pub fn with_registry(registry: Arc<OpRegistry>) -> Self {
        Tape {
            registry,
            nodes: Vec::new(),
        }
    }

    pub fn registry(&self) -> &Arc<OpRegistry> {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool, path: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            attrs: Attrs::new(),
            saved: Vec::new(),
            requires_grad: trainable,
            trainable,
            path,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// An unnamed leaf; `trainable` leaves receive a gradient.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push_leaf(value, trainable, None)
    }

    /// A named trainable leaf, reported under `path` by [`Tape::backward`].
    pub fn param(&mut self, path: impl Into<String>, value: Tensor) -> Var {
        self.push_leaf(value, true, Some(path.into()))
    }

    /// Runs operator `op` forward and records it.
    pub fn apply(&mut self, op: &str, inputs: &[Var], attrs: Attrs) -> Result<Var> {
        let operator = self.registry.get(op)?.clone();
        let fwd = {
            let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            operator.forward(&values, &attrs)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: fwd.output,
            op: Some(operator),
            inputs: inputs.to_vec(),
            attrs,
            saved: if requires_grad { fwd.saved } else { Vec::new() },
            requires_grad,
            trainable: false,
            path: None,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Tensors the operator kept for its backward rule (empty for leaves
    /// and for nodes that need no gradient).
    pub fn saved(&self, v: Var) -> &[Tensor] {
        &self.nodes[v.0].saved
    }

    /// Gradient of a trainable leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Propagates `d loss / d node` to every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::full(shape, 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = node.op.as_ref() else {
                if node.trainable {
                    if let Some(path) = &node.path {
                        out.by_path.insert(path.clone(), g.clone());
                    }
                    self.nodes[i].grad = Some(g);
                }
                continue;
            };
            if let Some(bad) = node.inputs.iter().find(|v| v.0 >= i) {
                return Err(TensorError::CycleDetected { node: i, input: bad.0 });
            }
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let values: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let cx = BackwardCx {
                inputs: &values,
                output: &node.value,
                saved: &node.saved,
                attrs: &node.attrs,
                grad_output: &g,
                needs_grad: &needs,
            };
            let grads = op.backward(&cx)?;
            for ((input, grad), &need) in node.inputs.iter().zip(grads).zip(&needs) {
                let Some(grad) = grad.filter(|_| need) else { continue };
                if grad.shape() != self.nodes[input.0].value.shape() {
                    return Err(TensorError::shape(
                        op.name(),
                        format!(
                            "backward produced {:?} for input of shape {:?}",
                            grad.shape(),
                            self.nodes[input.0].value.shape()
                        ),
                    ));
                }
                match &mut pending[input.0] {
                    Some(acc) => acc.accumulate(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(out)
    }
}

/// Stride, padding and dilation of a convolution, one entry per spatial axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: Vec<usize>,
    pub pad: Vec<usize>,
    pub dilation: Vec<usize>,
}

impl ConvParams {
    pub fn new(stride: &[usize], pad: &[usize], dilation: &[usize]) -> Self {
        ConvParams {
            stride: stride.to_vec(),
            pad: pad.to_vec(),
            dilation: dilation.to_vec(),
        }
    }

    /// Stride-1 convolution that keeps every axis length, for odd kernels.
    pub fn same(kernel: &[usize], dilation: &[usize]) -> Self {
        let pad = kernel.iter().zip(dilation).map(|(k, d)| d * (k - 1) / 2).collect();
        ConvParams {
            stride: vec![1; kernel.len()],
            pad,
            dilation: dilation.to_vec(),
        }
    }

    fn attrs(&self) -> Attrs {
        Attrs::new()
            .ints("stride", &self.stride)
            .ints("pad", &self.pad)
            .ints("dilation", &self.dilation)
    }
}

/// Typed shorthands over [`Tape::apply`].
impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply("add", &[a, b], Attrs::new())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply("mul", &[a, b], Attrs::new())
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply("scale", &[x], Attrs::new().float("factor", factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply("relu", &[x], Attrs::new())
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        self.apply("prelu", &[x, slope], Attrs::new())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply("sigmoid", &[x], Attrs::new())
    }

    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        self.apply("dropout", &[x], Attrs::new().float("p", p).int("seed", seed as i64))
    }

    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        self.apply(
            "matmul",
            &[a, b],
            Attrs::new().flag("trans_a", trans_a).flag("trans_b", trans_b),
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        match b {
            Some(b) => self.apply("linear", &[x, w, b], Attrs::new()),
            None => self.apply("linear", &[x, w], Attrs::new()),
        }
    }

    fn conv(&mut self, op: &str, x: Var, w: Var, b: Option<Var>, p: &ConvParams) -> Result<Var> {
        match b {
            Some(b) => self.apply(op, &[x, w, b], p.attrs()),
            None => self.apply(op, &[x, w], p.attrs()),
        }
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, p: &ConvParams) -> Result<Var> {
        self.conv("conv1d", x, w, b, p)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: &ConvParams) -> Result<Var> {
        self.conv("conv2d", x, w, b, p)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, p: &ConvParams) -> Result<Var> {
        self.conv("conv3d", x, w, b, p)
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Result<Var> {
        self.apply(
            "max_pool2d",
            &[x],
            Attrs::new().ints("kernel", &kernel).ints("stride", &stride).ints("pad", &pad),
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply("concat", parts, Attrs::new())
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply("reshape", &[x], Attrs::new().ints("shape", shape))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply("permute", &[x], Attrs::new().ints("axes", axes))
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply("mean", &[x], Attrs::new().ints("axes", axes))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply("softmax", &[x], Attrs::new())
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.apply("layer_norm", &[x, gamma, beta], Attrs::new())
    }

    /// Training mode uses batch statistics; evaluation mode requires the
    /// running `(mean, var)` pair.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(Var, Var)>,
        training: bool,
    ) -> Result<Var> {
        let attrs = Attrs::new().flag("training", training);
        match running {
            Some((m, v)) => self.apply("batch_norm", &[x, gamma, beta, m, v], attrs),
            None => self.apply("batch_norm", &[x, gamma, beta], attrs),
        }
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.apply("cross_entropy", &[logits, targets], Attrs::new())
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let rank = self.value(x).rank();
        let axes: Vec<usize> = (0..rank).collect();
        let m = self.mean(x, &axes)?;
        self.scale(m, n as f64)
    }
}
