//! Physics-informed neural networks for forward, inverse and parametric
//! differential-equation problems.

pub mod ad;
pub mod error;
pub mod expr;
pub mod harness;
pub mod networks;
pub mod parallel;
pub mod parameters;
pub mod physics;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
