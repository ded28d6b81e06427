//! Small differentiable-network core: dense and convolutional layers,
//! element-wise activations, Adam, target-network averaging and a
//! finite-difference gradient checker.

mod adam;
mod dropout;
mod gradcheck;
mod layer;
mod network;
mod tensor;

pub use adam::{soft_update, AdamState};
pub use dropout::BernoulliDropout;
pub use gradcheck::grad_check;
pub use layer::{conv_output_len, Activation, LayerSpec};
pub use network::{Network, Tape};
pub use tensor::Tensor;

pub(crate) use layer::dot;
