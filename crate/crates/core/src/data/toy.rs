use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{save_dataset, DatasetFrame, FrameDataset, SceneInfo, Split};
use super::imageio::straight_alpha;
use super::{io_err, DataError};
use crate::field::{FieldError, RadianceField, RadianceSample};
use crate::render::{render_pixels, all_pixels, Camera, RenderOptions};
use crate::vec3;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceColor {
    Solid { rgb: [f64; 3] },
    /// `positive` where the offset from the moving center has a non-negative
    /// component along `axis`, `negative` elsewhere.
    TwoTone {
        axis: [f64; 3],
        positive: [f64; 3],
        negative: [f64; 3],
    },
}

/// Cameras on a horizontal circle around `target`, all looking at it with
/// world `+z` up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Radians above the horizontal plane.
    pub elevation: f64,
    pub camera_angle_x: f64,
    pub target: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Missing fields in JSON take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySceneSpec {
    pub primitive: Primitive,
    /// Center at `t = 0`; the center at time `t` is `center + t · velocity`.
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub color: SurfaceColor,
    pub density: f64,
    pub cameras: CameraRing,
    /// Square image side in pixels.
    pub resolution: u32,
    pub splits: SplitSizes,
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            primitive: Primitive::Sphere { radius: 0.5 },
            center: [-0.4, 0.0, 0.0],
            velocity: [0.8, 0.0, 0.0],
            color: SurfaceColor::TwoTone {
                axis: [0.0, 0.0, 1.0],
                positive: [0.9, 0.35, 0.2],
                negative: [0.2, 0.45, 0.85],
            },
            density: 50.0,
            cameras: CameraRing {
                count: 40,
                radius: 4.0,
                elevation: 0.5,
                camera_angle_x: 0.69,
                target: [0.0; 3],
            },
            resolution: 64,
            splits: SplitSizes {
                train: 100,
                val: 8,
                test: 8,
            },
            near: 2.0,
            far: 6.0,
            n_samples: 32,
            background: [1.0; 3],
            seed: 0,
        }
    }
}

/// Closed-form radiance of the moving primitive: density `amplitude` inside,
/// zero outside, color from the surface function.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticField {
    pub primitive: Primitive,
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub color: SurfaceColor,
    pub density: f64,
    /// Whole-scene rotation applied after the motion (object to world).
    pub rotation: [[f64; 3]; 3],
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        vec3::dot(m[0], v),
        vec3::dot(m[1], v),
        vec3::dot(m[2], v),
    ]
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

impl AnalyticField {
    pub fn from_spec(spec: &ToySceneSpec) -> Self {
        Self {
            primitive: spec.primitive.clone(),
            center: spec.center,
            velocity: spec.velocity,
            color: spec.color.clone(),
            density: spec.density,
            rotation: IDENTITY,
        }
    }

    /// The same scene rotated rigidly by `r`.
    pub fn rotated(&self, r: [[f64; 3]; 3]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| r[i][k] * self.rotation[k][j]).sum();
            }
        }
        Self {
            rotation: m,
            ..self.clone()
        }
    }

    /// World-space center at time `t`.
    pub fn center_at(&self, t: f64) -> [f64; 3] {
        mat_vec(
            &self.rotation,
            vec3::add(self.center, vec3::scale(self.velocity, t)),
        )
    }

    pub fn world_velocity(&self) -> [f64; 3] {
        mat_vec(&self.rotation, self.velocity)
    }

    fn local(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        vec3::sub(
            mat_t_vec(&self.rotation, x),
            vec3::add(self.center, vec3::scale(self.velocity, t)),
        )
    }

    pub fn bounding_radius(&self) -> f64 {
        match &self.primitive {
            Primitive::Sphere { radius } => *radius,
            Primitive::Box { half_extents } => vec3::norm(*half_extents),
        }
    }

    pub fn contains(&self, x: [f64; 3], t: f64) -> bool {
        let p = self.local(x, t);
        match &self.primitive {
            Primitive::Sphere { radius } => vec3::dot(p, p) <= radius * radius,
            Primitive::Box { half_extents } => (0..3).all(|i| p[i].abs() <= half_extents[i]),
        }
    }

    pub fn surface_color(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        match &self.color {
            SurfaceColor::Solid { rgb } => *rgb,
            SurfaceColor::TwoTone {
                axis,
                positive,
                negative,
            } => {
                if vec3::dot(self.local(x, t), *axis) >= 0.0 {
                    *positive
                } else {
                    *negative
                }
            }
        }
    }

    /// Nearest non-negative ray parameter where the ray enters the primitive
    /// at time `t`.
    pub fn intersect(&self, origin: [f64; 3], direction: [f64; 3], t: f64) -> Option<f64> {
        let o = self.local(origin, t);
        let d = mat_t_vec(&self.rotation, direction);
        match &self.primitive {
            Primitive::Sphere { radius } => {
                let b = vec3::dot(o, d);
                let c = vec3::dot(o, o) - radius * radius;
                let a = vec3::dot(d, d);
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = (-b - disc.sqrt()) / a;
                let far = (-b + disc.sqrt()) / a;
                if far < 0.0 {
                    None
                } else {
                    Some(s.max(0.0))
                }
            }
            Primitive::Box { half_extents } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if d[i].abs() < 1e-300 {
                        if o[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - o[i]) / d[i];
                    let b = (half_extents[i] - o[i]) / d[i];
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                (lo <= hi && hi >= 0.0).then(|| lo.max(0.0))
            }
        }
    }
}

impl<F: Real> RadianceField<F> for AnalyticField {
    fn query(&self, x: [F; 3], _d: [F; 3], t: F) -> Result<RadianceSample<F>, FieldError> {
        let t = t.as_f64();
        if !(0.0..=1.0).contains(&t) {
            return Err(FieldError::TimeOutOfRange(t));
        }
        let x = vec3::to_f64(x);
        if self.contains(x, t) {
            Ok(RadianceSample {
                color: vec3::from_f64(self.surface_color(x, t)),
                density: F::lit(self.density),
            })
        } else {
            Ok(RadianceSample {
                color: [F::zero(); 3],
                density: F::zero(),
            })
        }
    }
}

/// Generated datasets plus the field that produced them.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub spec: ToySceneSpec,
    pub field: AnalyticField,
    pub info: SceneInfo,
    pub train: FrameDataset,
    pub val: FrameDataset,
    pub test: FrameDataset,
}

impl ToyScene {
    pub fn split(&self, split: Split) -> &FrameDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Midpoint-sampled render options matching the stored ground truth.
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            n_samples: self.spec.n_samples,
            background: self.spec.background,
            stratified_seed: None,
        }
    }

    /// Renders straight-alpha RGBA exactly as the generator stores it.
    pub fn render_rgba(&self, camera: &Camera, t: f64) -> Result<Vec<[u8; 4]>, DataError> {
        render_rgba(&self.field, camera, t, self.spec.n_samples)
    }

    /// Camera of the ring at `azimuth` radians.
    pub fn ring_camera(&self, azimuth: f64) -> Result<Camera, DataError> {
        ring_camera(&self.spec, azimuth)
    }
}

fn render_rgba(
    field: &AnalyticField,
    camera: &Camera,
    t: f64,
    n_samples: usize,
) -> Result<Vec<[u8; 4]>, DataError> {
    let opts = RenderOptions {
        n_samples,
        background: [0.0; 3],
        stratified_seed: None,
    };
    let px = all_pixels(camera.width, camera.height);
    let results = render_pixels::<f64, _>(field, camera, t, &px, &opts)?;
    Ok(results
        .iter()
        .map(|r| straight_alpha(r.color, r.opacity))
        .collect())
}

fn ring_camera(spec: &ToySceneSpec, azimuth: f64) -> Result<Camera, DataError> {
    let ring = &spec.cameras;
    let (ce, se) = (ring.elevation.cos(), ring.elevation.sin());
    let eye = vec3::add(
        ring.target,
        vec3::scale([ce * azimuth.cos(), ce * azimuth.sin(), se], ring.radius),
    );
    Ok(Camera::look_at(
        eye,
        ring.target,
        [0.0, 0.0, 1.0],
        ring.camera_angle_x,
        spec.resolution,
        spec.resolution,
        spec.near,
        spec.far,
    )?)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Step through ring positions that is coprime with the ring size, so
/// consecutive frames land far apart on the ring.
fn ring_stride(count: usize) -> usize {
    let mut s = ((count as f64 * 0.382).round() as usize).max(1);
    while gcd(s, count) != 1 {
        s += 1;
    }
    s
}

/// Rejects scenes where the bounding ball of the primitive leaves the view
/// cone or the `[near, far]` range of `camera` at some time in `[0, 1]`.
/// Checking both endpoints suffices because the swept volume is their convex
/// hull.
fn check_frustum(field: &AnalyticField, camera: &Camera) -> Result<(), DataError> {
    let eye = camera.origin();
    let m = &camera.camera_to_world;
    let forward = [-m[0][2], -m[1][2], -m[2][2]];
    let aspect = camera.height as f64 / camera.width as f64;
    let half = ((camera.camera_angle_x / 2.0).tan() * aspect.min(1.0)).atan();
    let rho = field.bounding_radius();
    for t in [0.0, 1.0] {
        let v = vec3::sub(field.center_at(t), eye);
        let dist = vec3::norm(v);
        if dist <= rho || dist - rho < camera.near || dist + rho > camera.far {
            return Err(DataError::ToyScene(format!(
                "primitive at t = {t} leaves the [near, far] range of a camera"
            )));
        }
        let angle = (vec3::dot(v, forward) / dist).clamp(-1.0, 1.0).acos();
        if angle + (rho / dist).asin() > half {
            return Err(DataError::ToyScene(format!(
                "primitive at t = {t} leaves the field of view of a camera"
            )));
        }
    }
    Ok(())
}

fn validate_spec(spec: &ToySceneSpec) -> Result<(), DataError> {
    let bad = |m: &str| Err(DataError::ToyScene(m.to_string()));
    match &spec.primitive {
        Primitive::Sphere { radius } if !(*radius > 0.0) => return bad("sphere radius must be positive"),
        Primitive::Box { half_extents } if half_extents.iter().any(|h| !(*h > 0.0)) => {
            return bad("box half extents must be positive")
        }
        _ => {}
    }
    if !(spec.density >= 0.0 && spec.density.is_finite()) {
        return bad("density must be finite and non-negative");
    }
    if spec.cameras.count == 0 || spec.splits.train == 0 {
        return bad("need at least one ring camera and one training frame");
    }
    if spec.resolution == 0 || spec.n_samples == 0 {
        return bad("resolution and sample count must be positive");
    }
    if let SurfaceColor::TwoTone { axis, .. } = &spec.color {
        if vec3::norm(*axis) == 0.0 {
            return bad("two-tone axis must be non-zero");
        }
    }
    Ok(())
}

fn build_split(
    spec: &ToySceneSpec,
    field: &AnalyticField,
    split: Split,
    size: usize,
) -> Result<FrameDataset, DataError> {
    let count = spec.cameras.count;
    let step = std::f64::consts::TAU / count as f64;
    let stride = ring_stride(count);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(split as u64 + 1);
    let mut frames = Vec::with_capacity(size);
    for i in 0..size {
        let k = (i * stride) % count;
        let (azimuth, time) = match split {
            // Evenly spaced times, starting at the canonical time 0.
            Split::Train => (
                k as f64 * step,
                if size > 1 {
                    i as f64 / (size - 1) as f64
                } else {
                    0.0
                },
            ),
            // Held-out views sit between training positions on the ring.
            _ => ((k as f64 + 0.5) * step, rng.random::<f64>()),
        };
        let camera = ring_camera(spec, azimuth)?;
        frames.push(DatasetFrame {
            file_path: format!("./{}/r_{i:03}", split.as_str()),
            transform_matrix: camera.camera_to_world,
            time,
            rgba: render_rgba(field, &camera, time, spec.n_samples)?,
        });
    }
    Ok(FrameDataset {
        split,
        camera_angle_x: spec.cameras.camera_angle_x,
        width: spec.resolution,
        height: spec.resolution,
        frames,
    })
}

impl ToyScene {
    /// Renders every split in memory.
    pub fn build(spec: &ToySceneSpec) -> Result<Self, DataError> {
        validate_spec(spec)?;
        let field = AnalyticField::from_spec(spec);
        let step = std::f64::consts::TAU / spec.cameras.count as f64;
        for k in 0..spec.cameras.count {
            for offset in [0.0, 0.5] {
                check_frustum(&field, &ring_camera(spec, (k as f64 + offset) * step)?)?;
            }
        }
        Ok(Self {
            train: build_split(spec, &field, Split::Train, spec.splits.train)?,
            val: build_split(spec, &field, Split::Val, spec.splits.val)?,
            test: build_split(spec, &field, Split::Test, spec.splits.test)?,
            info: SceneInfo {
                near: spec.near,
                far: spec.far,
                background: spec.background,
            },
            spec: spec.clone(),
            field,
        })
    }
}

/// Builds the scene and writes `transforms_{train,val,test}.json`, the PNGs,
/// `scene.json` and the spec itself under `out`.
pub fn generate_toy_scene(spec: &ToySceneSpec, out: &Path) -> Result<ToyScene, DataError> {
    let scene = ToyScene::build(spec)?;
    for split in Split::ALL {
        save_dataset(scene.split(split), out)?;
    }
    let info = out.join("scene.json");
    fs::write(&info, serde_json::to_vec_pretty(&scene.info).expect("serialize"))
        .map_err(io_err(&info))?;
    let spec_path = out.join("toy_spec.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(spec).expect("serialize"))
        .map_err(io_err(&spec_path))?;
    Ok(scene)
}
