//! Dense arrays, reverse-mode differentiation and the finite-difference checker.

mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use ops::{
    conv_output_len, gelu, gelu_grad, sigmoid, silu, silu_grad, softplus, softplus_grad,
    softplus_inv, Padding,
};
pub use rng::Rng;
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use ops::reverse_axis;

#[cfg(test)]
mod tests;
