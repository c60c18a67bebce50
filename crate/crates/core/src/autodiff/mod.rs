//! Minimal reverse-mode automatic differentiation: tape, parameter store with
//! Adam, and a finite-difference oracle.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{AdamConfig, ParameterStore};
pub use tape::{softmax_rows, Gradients, Tape, Var};

pub(crate) use tape::softplus;
