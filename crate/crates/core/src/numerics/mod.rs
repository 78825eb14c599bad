//! Dense `f64` arithmetic, similarity kernels and a reverse-mode tape.

mod kernels;
mod linalg;
pub mod tape;

pub use kernels::{cosine_sim, cosine_sim_with, cosine_slices, log_sum_exp, DegeneratePolicy};
pub use linalg::{dot, norm, Matrix, Vector};
pub use tape::{Gradients, NodeId, Op, Tape};

/// Vectors with a smaller L2 norm are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("vector norm below {DEGENERATE_NORM}")]
    DegenerateVector,
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: (usize, usize) },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}
