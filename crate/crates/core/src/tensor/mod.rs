//! Dense tensors with reverse-mode differentiation.
//!
//! The op set is exactly what the segment model needs: elementwise
//! arithmetic, matmul/dense, 1D (transposed) convolution, pooling, the usual
//! activations, softmax, layer norm, dropout, the masked reconstruction loss
//! and cross-entropy. Everything is generic over [`Scalar`] so the same
//! graph runs in `f32` for training and `f64` for finite-difference
//! verification.

mod data;
mod gradcheck;
mod tape;

pub use data::{Scalar, TensorData};
pub use gradcheck::{grad_check, grad_check_cfg, GradCheckConfig};
pub use tape::{Tape, Var};
