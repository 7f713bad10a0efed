//! Dynamic neural radiance fields with frozen-deformation editing.
//!
//! A [`field::DynamicField`] pairs a deformation network (point and time to
//! displacement) with a time-free canonical network (point and direction to
//! color and density). Edits authored at one time are baked into a student
//! copy whose deformation network stays frozen, so they follow the motion at
//! every other time.

pub mod data;
pub mod edit;
pub mod field;
pub mod numcore;
pub mod pipeline;
pub mod render;
pub mod train;
pub mod vec3;
pub mod workflow;

pub use numcore::Real;
