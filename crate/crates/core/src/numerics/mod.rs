//! Dense tensors, reverse-mode differentiation and gradient verification.

mod gradcheck;
mod params;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckEntry, GradCheckOptions, GradCheckReport, Stencil};
pub use params::{normal, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tape::{gelu, sigmoid, AttnMask, Gradients, ParamGrads, Tape, Var};
pub(crate) use tape::{alpha_row, beta_row};
pub use tensor::{gemm, Tensor};

#[cfg(test)]
mod tests;
