//! Reverse-mode automatic differentiation over dense `f32` tensors, plus the
//! Gaussian layer primitives and Adam used to train every network.

pub mod checkpoint;
pub mod fd;
pub mod gaussian;
pub mod graph;
pub mod params;

pub use fd::{finite_difference_gradient, relative_error, FdEstimate, FiniteDiff};
pub use gaussian::{kl_diag_gaussian, reparameterize, GaussianParams};
pub use graph::{Gradients, Graph, Leaf, NodeId, Op};
pub use params::{AdamConfig, ParamStore};
