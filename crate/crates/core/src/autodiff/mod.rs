//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records the forward pass node by node; [`Graph::backward`]
//! returns gradients for any subset of named leaves. Parameters and inputs
//! are both leaves, so the same sweep serves weight updates and input-space
//! optimization.

mod graph;
mod ops;

pub use graph::{GradientMap, Graph, NodeId};
pub use ops::{cross_entropy, softmax_with_temperature, squared_l2, LOG_FLOOR};
