//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor) values.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
