//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! walks the records in reverse and accumulates gradients into every
//! ancestor that requires them.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
