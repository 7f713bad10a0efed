//! Datasets in the dynamic Blender layout, the procedural toy scene with its
//! analytic field, the PNG boundary and `.sdnf` checkpoints.

mod checkpoint;
mod dataset;
mod imageio;
mod toy;

use std::path::PathBuf;

use thiserror::Error;

use crate::render::RenderError;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, OptimizerState, SceneMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{load_dataset, load_scene_info, save_dataset, DatasetFrame, FrameDataset, SceneInfo, Split};
pub use imageio::{composite_rgba, decode_rgba_png, encode_rgb_png, encode_rgba_png, quantize, straight_alpha};
pub use toy::{
    generate_toy_scene, AnalyticField, CameraRing, Primitive, SplitSizes, SurfaceColor, ToyScene,
    ToySceneSpec,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file not found")]
    MissingFile(PathBuf),
    #[error("{path}: malformed transforms file: {message}")]
    MalformedJson { path: PathBuf, message: String },
    #[error(
        "frame {index} has no `time`; static transforms files are not supported, \
         give every frame a time in [0, 1]"
    )]
    MissingTime { index: usize },
    #[error("frame {index}: time {time} outside [0, 1]")]
    TimeOutOfRange { index: usize, time: f64 },
    #[error("frame {index}: {reason}")]
    InvalidFrame { index: usize, reason: String },
    #[error("{path}: cannot decode image: {message}")]
    ImageDecode { path: PathBuf, message: String },
    #[error("frame {index}: image is {found:?}, other frames are {expected:?}")]
    SizeMismatch {
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("train split has no frame at the canonical time {0}")]
    NoCanonicalFrame(f64),
    #[error("dataset has no frames")]
    Empty,
    #[error("toy scene: {0}")]
    ToyScene(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path)
        } else {
            DataError::Io { path, source }
        }
    }
}
