//! Entry points shared by the command line and the service, so both produce
//! identical renders and edits for identical arguments.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{encode_rgb_png, Checkpoint, SceneMeta};
use crate::edit::{distill_student, DistillConfig, EditError, EditProxy, ProxyContext, ProxySpec};
use crate::field::{DynamicField, RadianceField};
use crate::render::{render_image, Camera, Image, RenderError, RenderOptions};
use crate::train::{LogRecord, TrainLog};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("`{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("checkpoint carries no scene metadata")]
    NoScene,
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// A camera pose: one of the scene presets or an explicit camera-to-world
/// matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseRef {
    Index(usize),
    Matrix([[f64; 4]; 4]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRequest {
    pub pose: PoseRef,
    pub time: f64,
    pub width: u32,
    pub height: u32,
    /// Samples per ray; the scene's training value when absent.
    #[serde(default)]
    pub n_samples: Option<usize>,
}

fn invalid(field: &'static str, message: impl Into<String>) -> WorkflowError {
    WorkflowError::Invalid {
        field,
        message: message.into(),
    }
}

impl ViewRequest {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if !(0.0..=1.0).contains(&self.time) {
            return Err(invalid("t", format!("{} outside [0, 1]", self.time)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width", "image size must be positive"));
        }
        if self.n_samples == Some(0) {
            return Err(invalid("samples", "must be positive"));
        }
        Ok(())
    }

    pub fn camera(&self, meta: &SceneMeta) -> Result<Camera, WorkflowError> {
        let pose = match &self.pose {
            PoseRef::Index(i) => *meta.poses.get(*i).ok_or_else(|| {
                invalid("pose", format!("preset {i} out of range ({} poses)", meta.poses.len()))
            })?,
            PoseRef::Matrix(m) => *m,
        };
        Camera::new(pose, meta.camera_angle_x, self.width, self.height, meta.near, meta.far)
            .map_err(|e| invalid("pose", e.to_string()))
    }
}

pub fn scene_of(ckpt: &Checkpoint) -> Result<&SceneMeta, WorkflowError> {
    ckpt.scene.as_ref().ok_or(WorkflowError::NoScene)
}

/// Deterministic midpoint-sampled render of `field` for `req`.
pub fn render_view<R: RadianceField<f32> + ?Sized>(
    field: &R,
    meta: &SceneMeta,
    req: &ViewRequest,
) -> Result<Image, WorkflowError> {
    req.validate()?;
    let camera = req.camera(meta)?;
    let opts = RenderOptions {
        n_samples: req.n_samples.unwrap_or(meta.n_samples),
        background: meta.background,
        stratified_seed: None,
    };
    Ok(render_image(field, &camera, req.time as f32, &opts)?)
}

pub fn render_view_png<R: RadianceField<f32> + ?Sized>(
    field: &R,
    meta: &SceneMeta,
    req: &ViewRequest,
) -> Result<Vec<u8>, WorkflowError> {
    Ok(encode_rgb_png(&render_view(field, meta, req)?))
}

/// Validates a proxy and resolves it against a checkpoint's field and scene.
pub fn resolve_proxy(
    ckpt: &Checkpoint,
    spec: &ProxySpec,
    base_dir: Option<&Path>,
) -> Result<EditProxy, EditError> {
    let meta = ckpt
        .scene
        .as_ref()
        .ok_or_else(|| EditError::Config("checkpoint carries no scene metadata".into()))?;
    spec.resolve(&ProxyContext {
        field: &ckpt.field,
        near: meta.near,
        far: meta.far,
        n_samples: meta.n_samples,
        base_dir,
    })
}

/// Distills `proxy` applied to `base` into a new checkpoint. The result has
/// no optimizer state and keeps the base scene metadata.
pub fn run_edit(
    base: &Checkpoint,
    proxy: EditProxy,
    config: &DistillConfig,
    on_step: impl FnMut(&LogRecord, &DynamicField<f32>),
) -> Result<(Checkpoint, TrainLog), EditError> {
    let meta = base
        .scene
        .as_ref()
        .ok_or_else(|| EditError::Config("checkpoint carries no scene metadata".into()))?;
    let teacher = crate::edit::TeacherModel::new(base.field.clone(), proxy);
    let student = teacher.fresh_student();
    let (field, log) = distill_student(&teacher, student, config, meta, on_step)?;
    Ok((
        Checkpoint {
            field,
            step: base.step,
            optimizer: None,
            scene: base.scene.clone(),
        },
        log,
    ))
}
