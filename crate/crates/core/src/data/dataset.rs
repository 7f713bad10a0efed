use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::imageio::{composite_rgba, decode_rgba_png, encode_rgba_png};
use super::{io_err, DataError};
use crate::render::{Camera, Image, RenderError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn transforms_file(self) -> String {
        format!("transforms_{}.json", self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFrame {
    /// As written in the transforms file, usually without extension.
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    pub time: f64,
    /// Straight-alpha RGBA8, row-major.
    pub rgba: Vec<[u8; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub split: Split,
    pub camera_angle_x: f64,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<DatasetFrame>,
}

impl FrameDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn camera(&self, index: usize, near: f64, far: f64) -> Result<Camera, RenderError> {
        Camera::new(
            self.frames[index].transform_matrix,
            self.camera_angle_x,
            self.width,
            self.height,
            near,
            far,
        )
    }

    /// Frame image composited onto `background`.
    pub fn image(&self, index: usize, background: [f64; 3]) -> Image {
        composite_rgba(self.width, self.height, &self.frames[index].rgba, background)
    }

    pub fn has_time(&self, t: f64) -> bool {
        self.frames.iter().any(|f| f.time == t)
    }
}

/// Rendering bounds that the transforms files do not carry. Read from an
/// optional `scene.json` next to them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneInfo {
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
}

impl Default for SceneInfo {
    fn default() -> Self {
        Self {
            near: 2.0,
            far: 6.0,
            background: [1.0; 3],
        }
    }
}

pub fn load_scene_info(root: &Path) -> Result<SceneInfo, DataError> {
    let path = root.join("scene.json");
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedJson {
            path,
            message: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SceneInfo::default()),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[derive(Deserialize)]
struct RawTransforms {
    camera_angle_x: f64,
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
struct RawFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
    time: Option<f64>,
}

#[derive(Serialize)]
struct OutTransforms<'a> {
    camera_angle_x: f64,
    frames: Vec<OutFrame<'a>>,
}

#[derive(Serialize)]
struct OutFrame<'a> {
    file_path: &'a str,
    transform_matrix: [[f64; 4]; 4],
    time: f64,
}

fn image_path(root: &Path, file_path: &str) -> PathBuf {
    let p = root.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn parse_matrix(index: usize, rows: &[Vec<f64>]) -> Result<[[f64; 4]; 4], DataError> {
    let bad = |reason: &str| DataError::InvalidFrame {
        index,
        reason: reason.to_string(),
    };
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return Err(bad("transform_matrix must be 4x4"));
    }
    let mut m = [[0.0; 4]; 4];
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(bad("transform_matrix has a non-finite entry"));
            }
            m[r][c] = v;
        }
    }
    Ok(m)
}

/// Reads `transforms_<split>.json` under `root` and every referenced image.
/// The train split must contain a frame at time 0.
pub fn load_dataset(root: &Path, split: Split) -> Result<FrameDataset, DataError> {
    let path = root.join(split.transforms_file());
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let raw: RawTransforms =
        serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedJson {
            path: path.clone(),
            message: e.to_string(),
        })?;
    if !(raw.camera_angle_x > 0.0 && raw.camera_angle_x < std::f64::consts::PI) {
        return Err(DataError::MalformedJson {
            path,
            message: format!("camera_angle_x {} outside (0, pi)", raw.camera_angle_x),
        });
    }
    if raw.frames.is_empty() {
        return Err(DataError::Empty);
    }
    let mut headers = Vec::with_capacity(raw.frames.len());
    for (index, f) in raw.frames.iter().enumerate() {
        let time = f.time.ok_or(DataError::MissingTime { index })?;
        if !(0.0..=1.0).contains(&time) {
            return Err(DataError::TimeOutOfRange { index, time });
        }
        headers.push((parse_matrix(index, &f.transform_matrix)?, time));
    }
    let images: Vec<(u32, u32, Vec<[u8; 4]>)> = raw
        .frames
        .par_iter()
        .map(|f| {
            let p = image_path(root, &f.file_path);
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            decode_rgba_png(&bytes).map_err(|message| DataError::ImageDecode { path: p, message })
        })
        .collect::<Result<_, _>>()?;
    let (width, height) = (images[0].0, images[0].1);
    let mut frames = Vec::with_capacity(images.len());
    for (index, ((f, (m, time)), (w, h, rgba))) in
        raw.frames.into_iter().zip(headers).zip(images).enumerate()
    {
        if (w, h) != (width, height) {
            return Err(DataError::SizeMismatch {
                index,
                expected: (width, height),
                found: (w, h),
            });
        }
        frames.push(DatasetFrame {
            file_path: f.file_path,
            transform_matrix: m,
            time,
            rgba,
        });
    }
    let ds = FrameDataset {
        split,
        camera_angle_x: raw.camera_angle_x,
        width,
        height,
        frames,
    };
    if split == Split::Train && !ds.has_time(0.0) {
        return Err(DataError::NoCanonicalFrame(0.0));
    }
    Ok(ds)
}

/// Writes the transforms file and one RGBA PNG per frame under `root`.
pub fn save_dataset(ds: &FrameDataset, root: &Path) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let out = OutTransforms {
        camera_angle_x: ds.camera_angle_x,
        frames: ds
            .frames
            .iter()
            .map(|f| OutFrame {
                file_path: &f.file_path,
                transform_matrix: f.transform_matrix,
                time: f.time,
            })
            .collect(),
    };
    let path = root.join(ds.split.transforms_file());
    let json = serde_json::to_vec_pretty(&out).expect("transforms serialize");
    fs::write(&path, json).map_err(io_err(&path))?;
    ds.frames.par_iter().try_for_each(|f| {
        let p = image_path(root, &f.file_path);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&p, encode_rgba_png(ds.width, ds.height, &f.rgba)).map_err(io_err(&p))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, name: &str, body: &str) {
        fs::write(root.join(name), body).unwrap();
    }

    fn png(root: &Path, name: &str) {
        fs::create_dir_all(root.join(name).parent().unwrap()).unwrap();
        fs::write(root.join(name), encode_rgba_png(2, 2, &[[10, 20, 30, 255]; 4])).unwrap();
    }

    #[test]
    fn one_frame_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path(), "train/r_000.png");
        write(
            dir.path(),
            "transforms_train.json",
            r#"{"camera_angle_x": 0.6911,
                "frames": [{"file_path": "./train/r_000", "rotation": 0.0, "time": 0.0,
                            "transform_matrix": [[1,0,0,0.5],[0,0,-1,-4.25],[0,1,0,1.0],[0,0,0,1]]}]}"#,
        );
        let ds = load_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.camera_angle_x, 0.6911);
        assert_eq!(
            ds.frames[0].transform_matrix,
            [
                [1.0, 0.0, 0.0, 0.5],
                [0.0, 0.0, -1.0, -4.25],
                [0.0, 1.0, 0.0, 1.0],
                [0.0, 0.0, 0.0, 1.0]
            ]
        );
        assert_eq!((ds.width, ds.height), (2, 2));
    }

    #[test]
    fn frame_without_time_names_its_index() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "transforms_val.json",
            r#"{"camera_angle_x": 0.7, "frames": [
                {"file_path": "a", "time": 0.5, "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]},
                {"file_path": "b", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        let err = load_dataset(dir.path(), Split::Val).unwrap_err();
        assert!(matches!(err, DataError::MissingTime { index: 1 }), "{err}");
        assert!(err.to_string().contains("static"));
    }

    #[test]
    fn distinct_errors_for_json_image_and_time() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "transforms_test.json", "{ not json");
        assert!(matches!(
            load_dataset(dir.path(), Split::Test),
            Err(DataError::MalformedJson { .. })
        ));

        write(
            dir.path(),
            "transforms_test.json",
            r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "nope", "time": 0.2,
                "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        assert!(matches!(
            load_dataset(dir.path(), Split::Test),
            Err(DataError::MissingFile(_))
        ));

        write(
            dir.path(),
            "transforms_test.json",
            r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "nope", "time": 1.5,
                "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        assert!(matches!(
            load_dataset(dir.path(), Split::Test),
            Err(DataError::TimeOutOfRange { index: 0, .. })
        ));

        assert!(matches!(
            load_dataset(dir.path(), Split::Val),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn train_split_needs_a_canonical_frame() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path(), "f.png");
        write(
            dir.path(),
            "transforms_train.json",
            r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "f.png", "time": 0.3,
                "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        );
        assert!(matches!(
            load_dataset(dir.path(), Split::Train),
            Err(DataError::NoCanonicalFrame(_))
        ));
    }

    #[test]
    fn scene_info_defaults_when_absent() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_scene_info(dir.path()).unwrap(), SceneInfo::default());
        write(dir.path(), "scene.json", r#"{"near": 1.0}"#);
        let info = load_scene_info(dir.path()).unwrap();
        assert_eq!((info.near, info.far), (1.0, 6.0));
    }
}
