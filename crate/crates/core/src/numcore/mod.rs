//! Dense `f64` kernel: tensors, affine layers, MLP backprop and Adam.

mod activation;
mod adam;
mod affine;
mod mlp;
mod tensor;

pub use activation::{relu, sigmoid, Activation};
pub use adam::{AdamConfig, AdamState, ParamSlot};
pub use affine::AffineLayer;
pub use mlp::{Mlp, MlpTrace};
pub use tensor::Tensor;
