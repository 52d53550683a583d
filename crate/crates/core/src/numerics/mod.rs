//! Dense tensors, a small reverse-mode tape, and the optimizer.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use optim::{adadelta_step, max_norm_rescale, sgd_step, Adadelta, AdadeltaConfig, AdadeltaState};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Grad, Gradients, Tape, Var};
pub use tensor::{activation, argmax, broadcast_scale, hadamard, matmul, sigmoid, softmax, Activation, Tensor};
