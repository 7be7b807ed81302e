//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitives as they are evaluated; [`Tape::backward`]
//! sweeps it in reverse from a scalar root and returns leaf adjoints. Tapes
//! are single-owner; build one per thread.

mod gradcheck;
mod tape;

pub use gradcheck::{
    compare_gradients, finite_differences, grad_check, grad_check_report, reverse_gradients, GradCheckReport,
};
pub use tape::{sigmoid, softplus, Gradients, Op, Tape, Var};

#[cfg(test)]
mod tests;
