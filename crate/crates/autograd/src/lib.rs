//! Reverse-mode differentiation over dense tensors.
//!
//! Models are written once against [`Graph`]; a [`Tape`] records the
//! computation for [`Tape::backward`], while [`Eager`] evaluates with no
//! retained intermediates for inference. Every [`Op`] has a forward and a
//! backward kernel in [`kernels`]; the exhaustive matches there are the
//! registry of derivatives.

pub mod check;
mod graph;
pub mod kernels;
mod op;
mod real;
mod tensor;

pub use check::{finite_difference_check, sample_coords};
pub use graph::{inject_backward_fault, Eager, Gradients, Graph, NodeId, Tape};
pub use op::{Aux, Op, OpKind, ZERO_ROW};
pub use real::{gemm, MatRef, Real};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite gradient for '{0}'")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, AutogradError>;
