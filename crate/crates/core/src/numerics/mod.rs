//! Tensors, parameters, reverse-mode gradients and the finite-difference checker.
//!
//! Supported differentiable ops: add, sub, elementwise mul, matmul, transpose,
//! row-vector broadcast over tokens, mean over an axis, concat on either axis,
//! sigmoid, `x·sigmoid(x)`, softmax over an axis, scalar scale, per-row block
//! matmul and mean squared error. All arithmetic is `f64`.

mod gradcheck;
mod graph;
pub mod io;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, Probe};
pub use graph::{Axis, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
