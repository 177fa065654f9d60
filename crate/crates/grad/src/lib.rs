//! Minimal dense reverse-mode differentiation.
//!
//! A [`Tape`] records operations on [`Tensor`] values as they run;
//! [`Tape::backward`] walks it in reverse node order. Named parameters and
//! Adam state live in a [`ParamStore`].

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{GradError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{AdamConfig, Param, ParamStore};
pub use tape::{BatchStats, CustomOp, Grads, Tape, Var};
pub use tensor::Tensor;
