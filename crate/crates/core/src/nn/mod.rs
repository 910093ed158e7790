//! Two-layer LSTM classifier with layer norm, dropout, temporal average
//! pooling and a two-layer head, trained with softmax cross-entropy and Adam.
//! Gradients are derived by hand; see [`gradcheck`] for the finite-difference
//! oracle that certifies them.

mod adam;
pub mod gradcheck;
mod loss;
mod model;
mod params;
pub mod rng;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use model::{backward, forward, DropoutMasks, ForwardCache, Mode};
pub use params::{DenseParams, Gradients, LayerNormParams, LstmParams, ModelConfig, ModelParams, TENSOR_NAMES};
pub use rng::{Purpose, RngKey, RngStream};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
}
