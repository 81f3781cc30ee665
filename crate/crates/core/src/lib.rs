//! Representations that are sufficient and necessary causes of a label.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod repro;
pub mod risk;
pub mod rng;
pub mod scm;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
