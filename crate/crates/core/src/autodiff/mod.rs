//! Tensors, the reverse-mode tape, and parameters with their optimizer.

mod param;
mod tape;
mod tensor;

pub use param::{sgd_nesterov_step, ParamId, Parameter};
pub use tape::{sigmoid, RunningStats, Tape, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use tensor::Tensor;
pub(crate) use tensor::argmax;
