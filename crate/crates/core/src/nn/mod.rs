//! A minimal tensor engine with reverse-mode differentiation and the
//! encoder/decoder built on it.

mod model;
mod tape;
mod tensor;

pub use model::{
    forward_on_tape, image_tensor, predict_field, ForwardNodes, ModelConfig, ModelParams, Param,
};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Scalar, Tensor4};
