//! Conservative normalizing flows for offline reinforcement learning.
//!
//! A conditional normalizing flow with a `tanh` output layer and a uniform
//! base distribution is pre-trained on dataset actions and then frozen as an
//! action decoder; a latent policy acting inside the bounded latent box is
//! trained with an advantage-weighted objective and twin critics.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the scalar
//! to `f64`, which is what checkpoints, gradient checks and the command-line
//! tool use.

pub mod autodiff;
pub mod envs;
pub mod error;
pub mod flow;
pub mod io;
pub mod moons;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Flow = flow::ConditionalFlow<f64>;
pub type Vae = flow::ConditionalVae<f64>;
pub type Encoder = flow::ActionEncoder<f64>;
