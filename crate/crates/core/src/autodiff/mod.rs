//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every sample. Parameters live in a
//! [`ParamStore`] and are bound lazily as leaves; constants enter through
//! [`Graph::input`]. Every primitive validates shapes and rejects
//! non-finite results at evaluation time.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::finite_difference_check;
pub use graph::{Gradients, Graph, NodeId, Primitive, PAIRWISE_L2_FLOOR};
pub(crate) use graph::log_sum_exp;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
