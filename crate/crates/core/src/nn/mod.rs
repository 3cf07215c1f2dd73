//! Minimal tensor and reverse-mode autodiff engine with exactly the layers
//! the detectors need: LSTM, affine (+tanh), FiLM, cosine, mean pooling and
//! softmax cross-entropy, plus Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod init;
pub(crate) mod kernels;
mod layers;
mod tensor;

pub use adam::{AdamState, DEFAULT_LR};
pub use graph::{softmax_rows, Activation, AffineIds, Graph, LstmIds, Var};
pub use init::{affine_param_count, lstm_param_count, Initializer};
pub use layers::{
    affine_tanh, film_modulate, lstm_forward, softmax_cross_entropy, LstmOutput, LstmWeights,
};
pub use tensor::{Gradients, ParamId, ParameterSet, Tensor};

#[cfg(test)]
mod tests;
