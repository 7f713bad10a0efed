//! Rays, sampling, compositing, whole-image rendering and PSNR.

mod camera;
mod composite;
mod sampling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, RadianceField};
use crate::vec3;
use crate::Real;

pub use camera::{camera_rays, Camera, Ray};
pub use composite::{composite, PixelResult};
pub use sampling::{sample_depths, sample_ray, RaySamples, Stratification};

/// Value reported by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("pixel ({x}, {y}) outside the image")]
    PixelOutOfBounds { x: u32, y: u32 },
    #[error("need at least one sample per ray")]
    ZeroSamples,
    #[error("{samples} samples but {spacings} spacings")]
    LengthMismatch { samples: usize, spacings: usize },
    #[error("sample {index}: negative or non-finite density/spacing")]
    InvalidSample { index: usize },
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[(y * self.width + x) as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub n_samples: usize,
    pub background: [f64; 3],
    /// Per-pixel jitter seeds are derived from this and the pixel index.
    pub stratified_seed: Option<u64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            n_samples: 64,
            background: [1.0; 3],
            stratified_seed: None,
        }
    }
}

const CHUNK_PIXELS: usize = 256;

pub(crate) fn pixel_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Renders one ray with the given samples.
pub fn render_ray<F: Real, R: RadianceField<F> + ?Sized>(
    field: &R,
    ray: &Ray,
    samples: &RaySamples<F>,
    t: F,
    background: [F; 3],
) -> Result<PixelResult<F>, RenderError> {
    let o: [F; 3] = vec3::from_f64(ray.origin);
    let d: [F; 3] = vec3::from_f64(ray.direction);
    let points: Vec<[F; 3]> = samples
        .depths
        .iter()
        .map(|&s| vec3::add(o, vec3::scale(d, s)))
        .collect();
    let dirs = vec![d; points.len()];
    let radiance = field.query_batch(&points, &dirs, t)?;
    composite(&radiance, &samples.depths, &samples.deltas, background)
}

/// Renders the listed pixels of `camera` at time `t`. Output is independent
/// of thread scheduling.
pub fn render_pixels<F: Real, R: RadianceField<F> + ?Sized>(
    field: &R,
    camera: &Camera,
    t: F,
    pixels: &[(u32, u32)],
    opts: &RenderOptions,
) -> Result<Vec<PixelResult<F>>, RenderError> {
    camera.validate()?;
    let bg: [F; 3] = vec3::from_f64(opts.background);
    let chunks: Vec<Result<Vec<PixelResult<F>>, RenderError>> = pixels
        .par_chunks(CHUNK_PIXELS)
        .map(|chunk| {
            let mut points = Vec::with_capacity(chunk.len() * opts.n_samples);
            let mut dirs = Vec::with_capacity(chunk.len() * opts.n_samples);
            let mut per_ray = Vec::with_capacity(chunk.len());
            for &(x, y) in chunk {
                let ray = camera.ray(x, y)?;
                let mode = match opts.stratified_seed {
                    None => Stratification::Midpoint,
                    Some(s) => Stratification::Jitter(pixel_seed(
                        s,
                        y as u64 * camera.width as u64 + x as u64,
                    )),
                };
                let samples: RaySamples<F> =
                    sample_ray(camera.near, camera.far, opts.n_samples, mode)?;
                let o: [F; 3] = vec3::from_f64(ray.origin);
                let d: [F; 3] = vec3::from_f64(ray.direction);
                for &s in &samples.depths {
                    points.push(vec3::add(o, vec3::scale(d, s)));
                    dirs.push(d);
                }
                per_ray.push(samples);
            }
            let radiance = field.query_batch(&points, &dirs, t)?;
            per_ray
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let n = opts.n_samples;
                    composite(&radiance[i * n..(i + 1) * n], &s.depths, &s.deltas, bg)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(pixels.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn all_pixels(width: u32, height: u32) -> Vec<(u32, u32)> {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .collect()
}

/// Composited opacity and normalized depth per pixel alongside the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub opacity: Vec<f32>,
}

pub fn render_frame<F: Real, R: RadianceField<F> + ?Sized>(
    field: &R,
    camera: &Camera,
    t: F,
    opts: &RenderOptions,
) -> Result<Frame, RenderError> {
    let px = all_pixels(camera.width, camera.height);
    let results = render_pixels(field, camera, t, &px, opts)?;
    let pixels = results
        .iter()
        .map(|r| {
            [
                r.color[0].as_f64() as f32,
                r.color[1].as_f64() as f32,
                r.color[2].as_f64() as f32,
            ]
        })
        .collect();
    Ok(Frame {
        image: Image {
            width: camera.width,
            height: camera.height,
            pixels,
        },
        opacity: results.iter().map(|r| r.opacity.as_f64() as f32).collect(),
    })
}

pub fn render_image<F: Real, R: RadianceField<F> + ?Sized>(
    field: &R,
    camera: &Camera,
    t: F,
    opts: &RenderOptions,
) -> Result<Image, RenderError> {
    Ok(render_frame(field, camera, t, opts)?.image)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, RenderError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(RenderError::DimensionMismatch(
            (a.width, a.height),
            (b.width, b.height),
        ));
    }
    let n = a.pixels.len() * 3;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] as f64 - q[c] as f64).powi(2)))
        .sum();
    Ok(sum / n as f64)
}

fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * m.log10()).min(PSNR_CAP)
    }
}

/// `-10 log10(MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, RenderError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR restricted to pixels where `mask` is true.
pub fn psnr_masked(a: &Image, b: &Image, mask: &[bool]) -> Result<f64, RenderError> {
    if (a.width, a.height) != (b.width, b.height) || mask.len() != a.pixels.len() {
        return Err(RenderError::DimensionMismatch(
            (a.width, a.height),
            (b.width, b.height),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, q), &m) in a.pixels.iter().zip(&b.pixels).zip(mask) {
        if m {
            for c in 0..3 {
                sum += (p[c] as f64 - q[c] as f64).powi(2);
            }
            n += 3;
        }
    }
    Ok(if n == 0 {
        PSNR_CAP
    } else {
        psnr_from_mse(sum / n as f64)
    })
}
