//! Minimal reverse-mode automatic differentiation over recorded tensor
//! operations. Computes gradients of a scalar loss with respect to inputs
//! and parameters alike; 64-bit floats throughout.

mod finite_diff;
mod graph;
pub mod ops;
mod tensor;

pub use finite_diff::{finite_diff_grad, grad_rel_err};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: NodeId,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: NodeId, op: &'static str },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("no loss node set")]
    NoLoss,
    #[error("unknown leaf '{0}'")]
    UnknownLeaf(String),
    #[error("invalid tensor: {detail}")]
    BadTensor { detail: String },
}
