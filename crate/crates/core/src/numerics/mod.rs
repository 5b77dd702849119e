//! Differentiable numerics: tensors, a reverse-mode tape, parameters,
//! AdamW and finite-difference checks.

pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_param_terms, grad_check_params, relative_error};
pub use graph::{AttentionLayout, Gradients, Graph, Var};
pub use gru::GruCell;
pub use loss::{cross_entropy_masked, valid_rows, SENTINEL};
pub use optim::AdamWState;
pub use params::{uniform_init, LayerNorm, Linear, Param, ParamStore};
pub use tensor::Tensor;

/// Negative slope of every LeakyReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Dropout rate used wherever a layer calls for dropout.
pub const DROPOUT_RATE: f64 = 0.1;
