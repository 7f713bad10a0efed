//! Numerical substrate: a fixed-topology multilayer perceptron with a manual
//! backward pass, the Adam optimizer, and a central finite-difference checker.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while the
//! gradient checks run in `f64`.

mod adam;
mod gradcheck;
mod mlp;
mod real;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckError, GradCheckReport, ParamVec};
pub use mlp::{Activation, Layer, LayerSpec, MlpError, MlpParams, Tape};
pub use real::Real;
