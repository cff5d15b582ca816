//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation with its forward value; [`Graph::backward`]
//! walks the record in reverse and accumulates adjoints. Parameters enter the
//! graph borrowed, so building a graph per training example does not copy the
//! weights.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var, LOG_EPS};
pub use tensor::Tensor;
