use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::teacher::TeacherModel;
use super::EditError;
use crate::data::SceneMeta;
use crate::field::{DynamicField, RadianceField};
use crate::numcore::{adam_step, AdamConfig, AdamState, MlpParams};
use crate::pipeline::{pixel_loss_and_grad, TrainRay};
use crate::render::{
    composite, psnr_masked, render_image, sample_ray, Camera, Ray, RaySamples, RenderOptions,
    Stratification,
};
use crate::train::{LogRecord, TrainLog};
use crate::vec3;

/// Ring of supervision cameras around `target`. Radius and elevation default
/// to the means over the training poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraPoolSpec {
    pub count: usize,
    pub radius: Option<f64>,
    pub elevation: Option<f64>,
    pub target: [f64; 3],
    /// Rotates the whole ring, in radians.
    pub azimuth_offset: f64,
}

impl Default for CameraPoolSpec {
    fn default() -> Self {
        Self {
            count: 20,
            radius: None,
            elevation: None,
            target: [0.0; 3],
            azimuth_offset: 0.0,
        }
    }
}

impl CameraPoolSpec {
    pub fn cameras(&self, meta: &SceneMeta) -> Result<Vec<Camera>, EditError> {
        if self.count == 0 {
            return Err(EditError::Config("camera pool must not be empty".into()));
        }
        let offsets: Vec<[f64; 3]> = meta
            .poses
            .iter()
            .map(|m| vec3::sub([m[0][3], m[1][3], m[2][3]], self.target))
            .collect();
        let mean = |f: &dyn Fn(&[f64; 3]) -> f64| {
            offsets.iter().map(f).sum::<f64>() / offsets.len().max(1) as f64
        };
        let radius = match self.radius {
            Some(r) => r,
            None if !offsets.is_empty() => mean(&|o| vec3::norm(*o)),
            None => return Err(EditError::Config("no poses to infer the ring radius from".into())),
        };
        let elevation = self
            .elevation
            .unwrap_or_else(|| mean(&|o| (o[2] / vec3::norm(*o)).clamp(-1.0, 1.0).asin()));
        (0..self.count)
            .map(|k| {
                let az = self.azimuth_offset + std::f64::consts::TAU * k as f64 / self.count as f64;
                let dir = [
                    elevation.cos() * az.cos(),
                    elevation.cos() * az.sin(),
                    elevation.sin(),
                ];
                Ok(Camera::look_at(
                    vec3::add(self.target, vec3::scale(dir, radius)),
                    self.target,
                    [0.0, 0.0, 1.0],
                    meta.camera_angle_x,
                    meta.width,
                    meta.height,
                    meta.near,
                    meta.far,
                )?)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub steps: u64,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    /// Fraction of each batch drawn inside the projected proxy region.
    pub region_ray_fraction: f64,
    pub pool: CameraPoolSpec,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Period of the off-region drift diagnostic; 0 disables it.
    pub diagnostic_every: u64,
    pub adam: AdamConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_rays: 4096,
            samples_per_ray: 64,
            region_ray_fraction: 0.5,
            pool: CameraPoolSpec::default(),
            lr_start: 5e-4,
            lr_end: 5e-5,
            seed: 0,
            diagnostic_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), EditError> {
        let bad = |m: &str| Err(EditError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.region_ray_fraction) {
            return bad("region_ray_fraction must lie in [0, 1]");
        }
        if self.batch_rays == 0 || self.samples_per_ray == 0 {
            return bad("batch_rays and samples_per_ray must be at least 1");
        }
        if self.pool.count == 0 {
            return bad("camera pool must not be empty");
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return bad("need 0 < lr_end <= lr_start");
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        if step == 0 || self.steps == 0 {
            return self.lr_start;
        }
        if step >= self.steps {
            return self.lr_end;
        }
        self.lr_start * (self.lr_end / self.lr_start).powf(step as f64 / self.steps as f64)
    }
}

/// Renders each ray's color through `field` on exactly the given samples.
pub fn label_rays<R: RadianceField<f32> + ?Sized>(
    field: &R,
    rays: &[(Ray, RaySamples<f32>)],
    t: f32,
    background: [f32; 3],
) -> Result<Vec<[f32; 3]>, EditError> {
    const CHUNK: usize = 32;
    let parts: Vec<Result<Vec<[f32; 3]>, EditError>> = rays
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut points = Vec::new();
            let mut dirs = Vec::new();
            for (ray, s) in chunk {
                let o: [f32; 3] = vec3::from_f64(ray.origin);
                let d: [f32; 3] = vec3::from_f64(ray.direction);
                for &depth in &s.depths {
                    points.push(vec3::add(o, vec3::scale(d, depth)));
                    dirs.push(d);
                }
            }
            let radiance = field.query_batch(&points, &dirs, t)?;
            let mut off = 0;
            chunk
                .iter()
                .map(|(_, s)| {
                    let n = s.depths.len();
                    let px = composite(&radiance[off..off + n], &s.depths, &s.deltas, background)?;
                    off += n;
                    Ok(px.color)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(rays.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Optimizes a student's canonical network against teacher renders at the
/// edit time. The deformation network is never touched.
pub struct Distiller<'a, B> {
    teacher: &'a TeacherModel<B>,
    student: DynamicField<f32>,
    config: DistillConfig,
    background: [f64; 3],
    cameras: Vec<Camera>,
    /// Cameras that see the proxy region, with its pixel bounds.
    targeted: Vec<(usize, (u32, u32, u32, u32))>,
    adam: AdamState<f32>,
    frozen: MlpParams<f32>,
    frozen_fingerprint: u64,
    step: u64,
    log: TrainLog,
    started: Instant,
}

impl<'a, B: RadianceField<f32>> Distiller<'a, B> {
    pub fn new(
        teacher: &'a TeacherModel<B>,
        student: DynamicField<f32>,
        config: DistillConfig,
        meta: &SceneMeta,
    ) -> Result<Self, EditError> {
        config.validate()?;
        let cameras = config.pool.cameras(meta)?;
        let targeted = cameras
            .iter()
            .enumerate()
            .filter_map(|(i, c)| teacher.proxy().projected_bounds(c).map(|b| (i, b)))
            .collect();
        Ok(Self {
            adam: AdamState::new(&student.canonical, config.adam),
            frozen: student.deformation.clone(),
            frozen_fingerprint: student.deformation_fingerprint(),
            teacher,
            student,
            config,
            background: meta.background,
            cameras,
            targeted,
            step: 0,
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    pub fn student(&self) -> &DynamicField<f32> {
        &self.student
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    fn t_edit(&self) -> f32 {
        self.teacher.proxy().t_edit as f32
    }

    /// Unlabeled rays of the batch for `step`, keyed on `(seed, step)`.
    pub fn rays(&self, step: u64) -> Result<Vec<(Ray, RaySamples<f32>)>, EditError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let n = self.config.batch_rays;
        let n_region = if self.targeted.is_empty() {
            0
        } else {
            (self.config.region_ray_fraction * n as f64).round() as usize
        };
        (0..n)
            .map(|i| {
                let (cam, x, y) = if i < n_region {
                    let (ci, (x0, y0, x1, y1)) = self.targeted[rng.random_range(0..self.targeted.len())];
                    (&self.cameras[ci], rng.random_range(x0..=x1), rng.random_range(y0..=y1))
                } else {
                    let cam = &self.cameras[rng.random_range(0..self.cameras.len())];
                    (cam, rng.random_range(0..cam.width), rng.random_range(0..cam.height))
                };
                let s = sample_ray(
                    cam.near,
                    cam.far,
                    self.config.samples_per_ray,
                    Stratification::Jitter(rng.random()),
                )?;
                Ok((cam.ray(x, y)?, s))
            })
            .collect()
    }

    /// The batch for `step` with teacher colors as targets.
    pub fn labeled_batch(&self, step: u64) -> Result<Vec<TrainRay<f32>>, EditError> {
        let rays = self.rays(step)?;
        let t = self.t_edit();
        let labels = label_rays(self.teacher, &rays, t, vec3::from_f64(self.background))?;
        Ok(rays
            .into_iter()
            .zip(labels)
            .map(|((ray, s), c)| TrainRay::new(&ray, t, s, c))
            .collect())
    }

    pub fn step(&mut self) -> Result<LogRecord, EditError> {
        let batch = self.labeled_batch(self.step)?;
        let eval = pixel_loss_and_grad(&self.student, &batch, vec3::from_f64(self.background), true)?;
        let loss = eval.loss as f64;
        if !loss.is_finite() {
            return Err(EditError::Diverged {
                step: self.step,
                loss,
                reason: "non-finite loss".into(),
                snapshot: Box::new(self.student.clone()),
            });
        }
        if eval.grads.deformation.norm_sq() != 0.0 {
            return Err(EditError::DeformationChanged);
        }
        let lr = self.config.learning_rate(self.step);
        let snapshot = self.student.canonical.clone();
        if let Err(e) = adam_step(&mut self.student.canonical, &eval.grads.canonical, &mut self.adam, lr as f32) {
            self.student.canonical = snapshot;
            return Err(EditError::Diverged {
                step: self.step,
                loss,
                reason: e.to_string(),
                snapshot: Box::new(self.student.clone()),
            });
        }
        let every = self.config.diagnostic_every;
        let psnr = if every > 0 && (self.step + 1) % every == 0 {
            Some(self.drift_psnr(0, 64)?)
        } else {
            None
        };
        let record = LogRecord {
            step: self.step,
            loss,
            lr,
            psnr,
            deformation_magnitude: None,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        };
        self.log.push(record.clone());
        self.step += 1;
        Ok(record)
    }

    /// PSNR between student and teacher-base renders from pool camera
    /// `index` at the edit time, over pixels outside the projected region.
    pub fn drift_psnr(&self, index: usize, size: u32) -> Result<f64, EditError> {
        let cam = self.cameras[index].with_size(size, size);
        let opts = RenderOptions {
            n_samples: self.config.samples_per_ray,
            background: self.background,
            stratified_seed: None,
        };
        let t = self.t_edit();
        let a = render_image(&self.student, &cam, t, &opts)?;
        let b = render_image(self.teacher.base(), &cam, t, &opts)?;
        let bounds = self.teacher.proxy().projected_bounds(&cam);
        let mask: Vec<bool> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .map(|(x, y)| match bounds {
                Some((x0, y0, x1, y1)) => !(x >= x0 && x <= x1 && y >= y0 && y <= y1),
                None => true,
            })
            .collect();
        Ok(psnr_masked(&a, &b, &mask)?)
    }

    /// Verifies the deformation network is bit-identical to its value at
    /// construction and returns the student and log.
    pub fn finish(self) -> Result<(DynamicField<f32>, TrainLog), EditError> {
        if self.student.deformation_fingerprint() != self.frozen_fingerprint
            || self.student.deformation != self.frozen
        {
            return Err(EditError::DeformationChanged);
        }
        Ok((self.student, self.log))
    }
}

/// Runs all distillation steps, calling `on_step` after each.
pub fn distill_student<B: RadianceField<f32>>(
    teacher: &TeacherModel<B>,
    student: DynamicField<f32>,
    config: &DistillConfig,
    meta: &SceneMeta,
    mut on_step: impl FnMut(&LogRecord, &DynamicField<f32>),
) -> Result<(DynamicField<f32>, TrainLog), EditError> {
    let mut d = Distiller::new(teacher, student, config.clone(), meta)?;
    while !d.is_done() {
        let r = d.step()?;
        on_step(&r, d.student());
    }
    d.finish()
}
