//! Barlow Twins and mixup-regularized Barlow Twins self-supervised
//! pretraining on a small tape-based autodiff engine.
//!
//! Start with the `examples/` directory; each file exercises one part of the
//! library end to end.

// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod cli;
pub mod curves;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod selftest;
pub mod tensor;
pub mod trainloop;

pub use error::{Error, Result};
pub use tensor::Tensor;
