//! Dense tensors, a reverse-mode tape, and a finite-difference checker.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params, relative_error, GradCheckReport};
pub use param::{GradBuf, Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var, LOG_CLAMP};
pub use tensor::{activation, sigmoid, softmax, Activation, Tensor};
