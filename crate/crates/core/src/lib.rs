//! Heartbeat-level ECG representation learning: signal conditioning,
//! beat segmentation, a small autodiff engine, the segment encoder /
//! transformer model, self-supervised pre-training, fine-tuning,
//! evaluation, and gradient saliency.
//!
//! Heavy inner loops are data-parallel via rayon when the `parallel`
//! feature (on by default) is enabled; [`par::set_sequential`] forces
//! the sequential path at runtime. Both paths produce bitwise-identical
//! results.

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod par;
pub mod saliency;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
