//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! [`Tape`] records a dynamic graph per forward pass; [`ParamStore`] owns the
//! trainable tensors and binds them to a tape as leaves.

mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{
    grad_check, grad_check_coords, grad_check_params, relative_error, ParamCheck, FD_STEP, REL_ERROR_FLOOR,
};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
