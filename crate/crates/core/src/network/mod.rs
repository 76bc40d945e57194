//! Attention U-Net: configuration, parameter container, forward pass and
//! analytic gradients.

mod config;
pub mod ops;
mod scalar;
mod unet;
mod weights;

pub use config::{ConvLayer, NetworkConfig};
pub use ops::{ConvGeom, Tensor};
pub use scalar::Real;
pub use unet::{
    accumulate_gradients, attention_coefficients, attention_gate, backward, backward_tensor, forward, forward_logits,
    forward_tensor, frame_tensor, sample_loss, GateWeights,
};
pub use weights::{init_weights, load_weights, read_weights, save_weights, write_weights, ModelWeights, ParamTensor};
