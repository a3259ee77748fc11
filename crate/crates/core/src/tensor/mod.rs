//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.

mod graph;
mod value;

pub use graph::{Graph, GruParams, Var};
pub use value::Tensor;
