//! Edits authored at one time and propagated to all others: proxies built
//! from user input, a teacher that applies them to a frozen field, and
//! distillation into a student whose deformation network never changes.

mod color;
mod distill;
mod proxy;
mod raycast;
mod teacher;

use thiserror::Error;

use crate::field::{DynamicField, FieldError};
use crate::numcore::MlpError;
use crate::render::RenderError;

pub use color::{hsl_to_rgb, rgb_to_hsl, seal_blend_hsl};
pub use distill::{distill_student, label_rays, CameraPoolSpec, DistillConfig, Distiller};
pub use proxy::{
    Brush, EditProxy, ImageRef, Mapped, ProxyContext, ProxyShape, ProxySpec, Seal, Stamp,
    StrokeInput,
};
pub use raycast::{hit_centroid, raycast_stroke, HIT_OPACITY};
pub use teacher::TeacherModel;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("`{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("unsupported edit: {0}")]
    Unsupported(String),
    #[error("stroke hit no surface")]
    NoSurface,
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("distillation diverged at step {step} (loss {loss}): {reason}")]
    Diverged {
        step: u64,
        loss: f64,
        reason: String,
        snapshot: Box<DynamicField<f32>>,
    },
    #[error("deformation network changed during distillation")]
    DeformationChanged,
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl EditError {
    /// Name of the offending proxy field, for validation errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            EditError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

impl From<FieldError> for EditError {
    fn from(e: FieldError) -> Self {
        EditError::Render(e.into())
    }
}

impl From<MlpError> for EditError {
    fn from(e: MlpError) -> Self {
        EditError::Render(FieldError::from(e).into())
    }
}
