//! Reverse-mode automatic differentiation over dense `f64` arrays, plus the
//! Adam optimizer and parameter initialization used by every trainable model.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, WeightDecay};
pub use params::{ParamEntry, ParamSet};
pub use tape::{Binary, ConvGeometry, Tape, Unary, Value};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("slice [{offset}, {end}) out of bounds for length {len}")]
    SliceOutOfBounds { offset: usize, end: usize, len: usize },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("optimizer step without gradients")]
    EmptyGradients,
    #[error("gradient length {grads} does not match parameter length {params}")]
    GradientLength { params: usize, grads: usize },
}
