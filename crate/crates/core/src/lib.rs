//! Pyramid Transformer encoder with a progressive locality decoder for
//! binary segmentation, built on a small define-by-run autodiff tape.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file name the concrete instantiations.

pub mod checks;
pub mod data;
pub mod encoder;
pub mod error;
pub mod model;
pub mod nn;
pub mod params;
pub mod pld;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use encoder::EncoderConfig;
pub use error::{Error, Result};
pub use model::{ModelConfig, SsFormer};
pub use params::{Bound, ParamId, ParamStore};
pub use pld::{FusionMode, PldConfig};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::{Fill, Gradients, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = SsFormer<f32>;
pub type Model64 = SsFormer<f64>;
