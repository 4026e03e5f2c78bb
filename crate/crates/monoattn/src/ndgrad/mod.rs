//! Reverse-mode automatic differentiation: arrays, the op tape, and a
//! finite-difference gradient checker.

mod array;
mod check;
mod graph;

pub use array::Array;
pub use check::{grad_check, DEFAULT_EPS};
pub use graph::{Gradients, Graph, NodeId};
