//! Dense float64 tensors, a per-pass differentiation tape, optimizers, and
//! the loss functions and recurrent cells the rest of the crate trains with.

pub mod adam;
pub mod checkpoint;
pub mod fd;
pub mod fourier;
pub mod loss;
pub mod nn;
pub mod session;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use fourier::fourier_encode;
pub use session::{accumulate_loss_grads, GradMap, Session};
pub use tape::{Tape, Var};
pub use tensor::{ParamSet, Tensor};
