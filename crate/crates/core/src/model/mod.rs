//! Dense networks with analytic per-layer gradients, and a kernel SVM.

mod dataset;
mod network;
mod params;
mod second_order;
mod svm;
mod tensor;
mod train;

pub use dataset::{clip_box, Dataset};
pub use network::{sigmoid, softmax, Activation, Layer, Loss, Model};
pub(crate) use params::{decode_f64s, encode_f64s};
pub use params::{sgd_step, Layout, ParamSlot, ParamVector};
pub use svm::{train_svm, Kernel, SvmModel, SvmParams};
pub use tensor::{dot, norm2, Tensor};
pub use train::{train_sgd, SgdConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {loss:?} loss with {outputs} outputs")]
    LabelOutOfRange {
        label: i64,
        loss: Loss,
        outputs: usize,
    },
    #[error("invalid svm setup: {0}")]
    InvalidSvm(String),
    #[error("decode error: {0}")]
    Decode(String),
}
