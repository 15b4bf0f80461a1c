//! Float64 tensor engine: a named operator inventory with forward kernels
//! and backward rules, a recording [`Tape`] for reverse-mode
//! differentiation, and finite-difference checking.

pub mod attrs;
pub mod conv;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod op;
pub mod ops;
pub mod registry;
pub mod tape;
pub mod tensor;

pub use attrs::{AttrValue, Attrs};
pub use conv::{conv_oracle, ConvGeometry};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_graph, relative_error, GradCheck};
pub use op::{BackwardCx, Fixture, Forward, Operator};
pub use registry::{forward_op, standard_registry, OpRegistry};
pub use tape::{ConvParams, Gradients, Tape, Var};
pub use tensor::Tensor;
