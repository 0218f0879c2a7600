//! Dense reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] computes its value eagerly and records what
//! its backward rule needs. [`Tape::backward`] walks the records in reverse
//! and returns gradients for the leaves created with [`Tape::param`].

mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var, MASK_LOGIT, PROB_FLOOR};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
