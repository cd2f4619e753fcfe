//! Dense `f64` tensors, tape-based reverse-mode differentiation, Adam, and
//! the `NDM1` parameter container.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod nn;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use checkpoint::Checkpoint;
pub use nn::{Linear, Mlp};
pub use ops::{categorical_kl, gaussian_kl_unit, log_softmax, mse, softmax};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NdError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: length mismatch {left} vs {right}")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero extent in shape {0:?}")]
    EmptyExtent(Vec<usize>),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape node {node} references non-preceding node {input}")]
    CyclicTape { node: usize, input: usize },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
