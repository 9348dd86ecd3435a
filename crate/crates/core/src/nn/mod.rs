//! Minimal differentiable substrate: layer kernels with explicit backward
//! passes and the Adam optimizer.

mod conv;
pub mod layers;
pub mod optim;

pub use layers::{sigmoid, Activation, Layer, Mode, Param};
pub use optim::{Adam, AdamConfig};
