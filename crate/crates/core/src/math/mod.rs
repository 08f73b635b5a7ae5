//! Small differentiable-network substrate.

mod adam;
mod mlp;
mod real;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use mlp::{BoundMlp, Mlp};
pub use real::Real;
pub use rng::Rng;
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
