//! Differentiable layers shared by the encoder and the decoder.

mod activation;
pub(crate) mod conv;
mod layers;
mod linear;
mod norm;
pub(crate) mod upsample;

pub use activation::{gelu, gelu_scalar, relu, sigmoid, sigmoid_scalar};
pub use conv::{conv2d, ConvSpec};
pub use layers::{Conv2d, Init, Initializer, LayerNorm, Linear};
pub use linear::linear;
pub use norm::{layer_norm, softmax_rows, LAYER_NORM_EPS};
pub use upsample::bilinear_upsample;
