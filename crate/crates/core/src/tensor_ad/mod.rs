//! Dense tensors and a tape-based reverse-mode differentiator covering the
//! primitives needed by sequential feedforward networks: matmul, bias add,
//! ReLU, tanh, fused softmax cross-entropy, mean-squared error and mean
//! reduction.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("node {0} was never recorded on this tape; run the forward pass first")]
    NotRecorded(usize),
}
