//! Dense `f64` tensors with tape-based reverse-mode differentiation,
//! parameter storage, AdamW and a binary checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod kernels;
pub mod optim;
mod param;
pub mod rng;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use kernels::ConvGeom;
pub use optim::{AdamW, AdamWConfig, OptimizerState};
pub use param::{Grads, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
