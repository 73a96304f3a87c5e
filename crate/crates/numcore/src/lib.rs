//! Small dense-tensor core for training desk-scale transformers on the CPU.
//!
//! A [`Graph`] records operations over [`Tensor`]s borrowed from a
//! [`ParamStore`]; [`Graph::backward`] returns the gradients, which the store
//! accumulates and [`AdamState`] consumes. Everything is generic over
//! [`Scalar`] so the same model runs in `f32` for training and `f64` for
//! gradient checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod param;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{dropout_mask, Gradients, Graph, Var};
pub use kernels::AttnLayout;
pub use optim::{AdamConfig, AdamState};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite gradient in parameter {param}")]
    NonFinite { param: String },
    #[error("every target position is padding")]
    AllPadded,
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
