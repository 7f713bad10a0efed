use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::vec3;

/// Pinhole camera in the Blender convention: looks down its local `-z`,
/// `+y` up, `+x` right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub camera_to_world: [[f64; 4]; 4],
    pub camera_angle_x: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

impl Ray {
    pub fn at(&self, depth: f64) -> [f64; 3] {
        vec3::add(self.origin, vec3::scale(self.direction, depth))
    }
}

impl Camera {
    pub fn new(
        camera_to_world: [[f64; 4]; 4],
        camera_angle_x: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            camera_to_world,
            camera_angle_x,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        camera_angle_x: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let back = vec3::normalize(vec3::sub(eye, target));
        let right = vec3::normalize(vec3::cross(up, back));
        let true_up = vec3::cross(back, right);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][0] = right[r];
            m[r][1] = true_up[r];
            m[r][2] = back[r];
            m[r][3] = eye[r];
        }
        m[3][3] = 1.0;
        Self::new(m, camera_angle_x, width, height, near, far)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(RenderError::Camera(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::Camera("image size must be non-zero".into()));
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(RenderError::Camera(format!(
                "camera_angle_x {} outside (0, pi)",
                self.camera_angle_x
            )));
        }
        let m = &self.camera_to_world;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|r| m[r][i] * m[r][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-5 {
                    return Err(RenderError::Camera(
                        "rotation block is not orthonormal".into(),
                    ));
                }
            }
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RenderError::Camera("non-finite pose".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    pub fn origin(&self) -> [f64; 3] {
        let m = &self.camera_to_world;
        [m[0][3], m[1][3], m[2][3]]
    }

    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.camera_to_world;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Unit direction through the center of pixel `(x, y)`; `y` grows downwards.
    pub fn pixel_direction(&self, x: f64, y: f64) -> [f64; 3] {
        let f = self.focal();
        let local = [
            (x + 0.5 - 0.5 * self.width as f64) / f,
            -(y + 0.5 - 0.5 * self.height as f64) / f,
            -1.0,
        ];
        vec3::normalize(self.rotate(local))
    }

    pub fn ray(&self, x: u32, y: u32) -> Result<Ray, RenderError> {
        if x >= self.width || y >= self.height {
            return Err(RenderError::PixelOutOfBounds { x, y });
        }
        Ok(Ray {
            origin: self.origin(),
            direction: self.pixel_direction(x as f64, y as f64),
        })
    }

    /// Continuous image coordinates of a world point (pixel `i` spans
    /// `[i, i + 1)`), or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let m = &self.camera_to_world;
        let rel = vec3::sub(p, self.origin());
        let local: Vec<f64> = (0..3)
            .map(|c| m[0][c] * rel[0] + m[1][c] * rel[1] + m[2][c] * rel[2])
            .collect();
        if local[2] >= 0.0 {
            return None;
        }
        let f = self.focal();
        let depth = -local[2];
        Some([
            f * local[0] / depth + 0.5 * self.width as f64,
            -f * local[1] / depth + 0.5 * self.height as f64,
        ])
    }

    /// Same intrinsics, different resolution.
    pub fn with_size(&self, width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

pub fn camera_rays(camera: &Camera, pixels: &[(u32, u32)]) -> Result<Vec<Ray>, RenderError> {
    pixels.iter().map(|&(x, y)| camera.ray(x, y)).collect()
}
