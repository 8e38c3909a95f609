//! Minimal differentiable numerics: dense `f64` tensors, a reverse-mode tape,
//! a GRU cell built from its primitives, and a finite-difference checker.

mod gradcheck;
mod graph;
mod gru;
pub mod io;
mod param;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, relative_error, relative_error_above,
    resolution_floor, GradCheckOptions, GradReport, ParamGradError, LOSS_ROUNDING_ULPS,
};
pub use graph::{BranchLog, Gradients, Graph, Var};
pub use gru::{gru_cell, gru_sequence, GruParams, GruVars};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    graph::sigmoid(x)
}
