//! Reverse-mode automatic differentiation over dense tensors.

mod adam;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use param::{Module, ParamId, Parameter};
pub use tape::{concat_cols, log_sech2, Gradients, Tape, Var};
pub use tensor::Tensor;
