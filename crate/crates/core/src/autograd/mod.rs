//! Minimal reverse-mode automatic differentiation over dense arrays.

mod gradcheck;
mod ops;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use ops::{
    binary, concat_channels, reduce, split_channels, unary, BinaryOp, ReduceOp, UnaryOp,
};
pub use tensor::{grad_enabled, no_grad, BackwardFn, GraphNode, NoGradGuard, Tensor};
