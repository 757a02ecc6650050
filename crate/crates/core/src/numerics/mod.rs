//! Dense tensors, reverse-mode differentiation and special functions.

mod graph;
mod special;
mod tensor;

pub use graph::{softplus, softplus_scalar, Gradients, Graph, Var};
pub(crate) use special::lgamma_unchecked;
pub use special::{digamma, lgamma, trigamma};
pub use tensor::{matmul, Tensor};
