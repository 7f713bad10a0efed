use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::color::{hsl_to_rgb, seal_blend_hsl};
use super::raycast::raycast_stroke;
use super::EditError;
use crate::data::decode_rgba_png;
use crate::field::DynamicField;
use crate::render::Camera;
use crate::vec3;

/// Screen-space stroke: pixels plus the camera they were drawn in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeInput {
    pub pixels: Vec<[u32; 2]>,
    pub pose: [[f64; 4]; 4],
    pub camera_angle_x: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    /// Relative paths resolve against the proxy file's directory.
    Path(String),
    PngBase64(String),
}

/// Wire format of an edit, shared by the CLI and the service. Which fields
/// are required depends on `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxySpec {
    pub kind: String,
    pub t_edit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stroke: Option<StrokeInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_u: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_v: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slab_half_width: Option<f64>,
}

/// What a proxy needs from the scene to resolve screen-space input.
pub struct ProxyContext<'a> {
    pub field: &'a DynamicField<f32>,
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    pub base_dir: Option<&'a Path>,
}

impl ProxyContext<'_> {
    fn sample_spacing(&self) -> f64 {
        (self.far - self.near) / self.n_samples as f64
    }
}

const MOTION_KINDS: [&str; 7] = ["move", "deform", "warp", "anchor", "duplicate", "remove", "pose"];

fn invalid(field: &'static str, message: impl Into<String>) -> EditError {
    EditError::Invalid {
        field,
        message: message.into(),
    }
}

fn require<T: Clone>(v: &Option<T>, field: &'static str) -> Result<T, EditError> {
    v.clone().ok_or_else(|| invalid(field, "required"))
}

fn finite3(v: [f64; 3], field: &'static str) -> Result<[f64; 3], EditError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn unit(v: [f64; 3], field: &'static str) -> Result<[f64; 3], EditError> {
    let n = vec3::norm(finite3(v, field)?);
    if n == 0.0 {
        return Err(invalid(field, "must be non-zero"));
    }
    if (n - 1.0).abs() > 1e-6 {
        return Err(invalid(field, format!("must be unit length (norm {n})")));
    }
    Ok(v)
}

impl ProxySpec {
    /// Validates every field that does not need the scene. Errors name the
    /// offending field.
    pub fn validate(&self) -> Result<(), EditError> {
        match self.kind.as_str() {
            "brush" | "seal" => {}
            k if MOTION_KINDS.contains(&k) => {
                return Err(EditError::Unsupported(format!(
                    "`{k}` edits change how the scene moves; edits are baked into the canonical \
                     network while the deformation network stays frozen, so only appearance and \
                     local shape edits (brush, seal) are supported"
                )))
            }
            k => return Err(invalid("kind", format!("unknown kind `{k}` (expected brush or seal)"))),
        }
        if !(0.0..=1.0).contains(&self.t_edit) {
            return Err(invalid("t_edit", format!("{} outside [0, 1]", self.t_edit)));
        }
        if self.kind == "brush" {
            let p = require(&self.pressure, "pressure")?;
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("pressure", format!("{p} outside [0, 1]")));
            }
            let r = require(&self.radius, "radius")?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("radius", "must be positive"));
            }
            if let Some(n) = self.normal {
                unit(n, "normal")?;
            }
            match (&self.anchors, &self.stroke) {
                (None, None) => return Err(invalid("anchors", "give anchors or a stroke")),
                (Some(a), _) if a.is_empty() => return Err(invalid("anchors", "empty")),
                (Some(a), _) => {
                    for &p in a {
                        finite3(p, "anchors")?;
                    }
                }
                (None, Some(s)) => {
                    if s.pixels.is_empty() {
                        return Err(invalid("stroke", "no pixels"));
                    }
                    if let Some(p) = s.pixels.iter().find(|p| p[0] >= s.width || p[1] >= s.height) {
                        return Err(invalid("stroke", format!("pixel {p:?} outside {}x{}", s.width, s.height)));
                    }
                }
            }
        } else {
            let o = finite3(require(&self.origin, "origin")?, "origin")?;
            let u = finite3(require(&self.axis_u, "axis_u")?, "axis_u")?;
            let v = finite3(require(&self.axis_v, "axis_v")?, "axis_v")?;
            let _ = o;
            let (lu, lv) = (vec3::norm(u), vec3::norm(v));
            if lu == 0.0 || lv == 0.0 || vec3::norm(vec3::cross(u, v)) <= 1e-9 * lu * lv {
                return Err(invalid("axis_u", "seal rectangle axes are degenerate"));
            }
            if vec3::dot(u, v).abs() > 1e-6 * lu * lv {
                return Err(invalid("axis_v", "seal rectangle axes must be orthogonal"));
            }
            require(&self.image, "image")?;
            let a = self.alpha_threshold.unwrap_or(0.5);
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid("alpha_threshold", format!("{a} outside [0, 1]")));
            }
            if let Some(w) = self.slab_half_width {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(invalid("slab_half_width", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Validates and turns screen-space input into world-space geometry.
    pub fn resolve(&self, ctx: &ProxyContext<'_>) -> Result<EditProxy, EditError> {
        self.validate()?;
        let shape = if self.kind == "brush" {
            let (anchors, view_dir) = match (&self.anchors, &self.stroke) {
                (Some(a), _) => (a.clone(), None),
                (None, Some(s)) => {
                    let cam = Camera::new(s.pose, s.camera_angle_x, s.width, s.height, ctx.near, ctx.far)
                        .map_err(|e| invalid("stroke", e.to_string()))?;
                    let hits = raycast_stroke(ctx.field, &cam, self.t_edit, &s.pixels, ctx.n_samples)?;
                    let mut dir = [0.0; 3];
                    for &[x, y] in &s.pixels {
                        dir = vec3::add(dir, cam.pixel_direction(x as f64 + 0.5, y as f64 + 0.5));
                    }
                    (hits.into_iter().flatten().collect(), Some(dir))
                }
                (None, None) => unreachable!("validated"),
            };
            let normal = match (self.normal, view_dir) {
                (Some(n), _) => n,
                (None, Some(d)) => vec3::normalize(vec3::scale(d, -1.0)),
                (None, None) => return Err(invalid("normal", "required when anchors are given directly")),
            };
            ProxyShape::Brush(Brush {
                anchors,
                normal,
                pressure: self.pressure.expect("validated"),
                radius: self.radius.expect("validated"),
            })
        } else {
            let stamp = load_stamp(self.image.as_ref().expect("validated"), ctx.base_dir)?;
            ProxyShape::Seal(Seal {
                origin: self.origin.expect("validated"),
                axis_u: self.axis_u.expect("validated"),
                axis_v: self.axis_v.expect("validated"),
                stamp,
                alpha_threshold: self.alpha_threshold.unwrap_or(0.5),
                slab_half_width: self.slab_half_width.unwrap_or(2.0 * ctx.sample_spacing()),
            })
        };
        Ok(EditProxy {
            t_edit: self.t_edit,
            shape,
        })
    }
}

fn load_stamp(r: &ImageRef, base: Option<&Path>) -> Result<Stamp, EditError> {
    let bytes = match r {
        ImageRef::Path(p) => {
            let path = base.map_or_else(|| Path::new(p).to_path_buf(), |b| b.join(p));
            std::fs::read(&path).map_err(|e| invalid("image", format!("{}: {e}", path.display())))?
        }
        ImageRef::PngBase64(s) => base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(|e| invalid("image", format!("bad base64: {e}")))?,
    };
    let (width, height, rgba) = decode_rgba_png(&bytes).map_err(|e| invalid("image", e))?;
    Ok(Stamp { width, height, rgba })
}

/// Straight-alpha RGBA8 image stamped by the seal tool.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamp {
    pub width: u32,
    pub height: u32,
    pub rgba: Vec<[u8; 4]>,
}

impl Stamp {
    /// Nearest texel at rectangle coordinates `(u, v) ∈ [0, 1]²`; `(0, 0)` is
    /// the top-left texel, `v` grows downward.
    pub fn sample(&self, u: f64, v: f64) -> [u8; 4] {
        let x = ((u * self.width as f64).floor() as i64).clamp(0, self.width as i64 - 1) as u32;
        let y = ((v * self.height as f64).floor() as i64).clamp(0, self.height as i64 - 1) as u32;
        self.rgba[(y * self.width + x) as usize]
    }
}

/// Raises the surface around a stroke along `normal`.
#[derive(Clone, Debug, PartialEq)]
pub struct Brush {
    pub anchors: Vec<[f64; 3]>,
    pub normal: [f64; 3],
    pub pressure: f64,
    pub radius: f64,
}

/// Result of a spatial mapping. `inside` is false where the mapping is the
/// identity because the point is outside the proxy region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mapped {
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub inside: bool,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl Brush {
    /// Maximum raise `h = p · r`.
    pub fn height(&self) -> f64 {
        self.pressure * self.radius
    }

    fn perp(&self, v: [f64; 3]) -> [f64; 3] {
        vec3::sub(v, vec3::scale(self.normal, vec3::dot(v, self.normal)))
    }

    /// Distance from `x` to the stroke polyline measured across `normal`,
    /// and the height of `x` above the closest stroke point along `normal`.
    pub fn stroke_coordinates(&self, x: [f64; 3]) -> (f64, f64) {
        let segments: Vec<([f64; 3], [f64; 3])> = if self.anchors.len() == 1 {
            vec![(self.anchors[0], self.anchors[0])]
        } else {
            self.anchors.windows(2).map(|w| (w[0], w[1])).collect()
        };
        let mut best = (f64::INFINITY, 0.0);
        for (a, b) in segments {
            let ab = self.perp(vec3::sub(b, a));
            let ax = self.perp(vec3::sub(x, a));
            let len2 = vec3::dot(ab, ab);
            let s = if len2 > 0.0 {
                (vec3::dot(ax, ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = vec3::add(a, vec3::scale(vec3::sub(b, a), s));
            let lateral = vec3::norm(self.perp(vec3::sub(x, p)));
            if lateral < best.0 {
                best = (lateral, vec3::dot(vec3::sub(x, p), self.normal));
            }
        }
        best
    }

    /// Region where the mapping applies: within `radius` of the stroke across
    /// the normal and between `-radius` and `h + radius` along it.
    pub fn contains(&self, x: [f64; 3]) -> bool {
        let (lateral, height) = self.stroke_coordinates(x);
        lateral <= self.radius && height >= -self.radius && height <= self.height() + self.radius
    }

    /// Spatial falloff in `[0, 1]`: `smoothstep(1 - lateral / r)`.
    pub fn falloff(&self, x: [f64; 3]) -> f64 {
        smoothstep(1.0 - self.stroke_coordinates(x).0 / self.radius)
    }

    /// `x_s = x_t - falloff(x_t) · h · n`; direction unchanged.
    pub fn map(&self, x: [f64; 3], d: [f64; 3]) -> Mapped {
        if !self.contains(x) {
            return Mapped {
                point: x,
                direction: d,
                inside: false,
            };
        }
        if self.pressure == 0.0 {
            return Mapped {
                point: x,
                direction: d,
                inside: true,
            };
        }
        let shift = self.falloff(x) * self.height();
        Mapped {
            point: vec3::sub(x, vec3::scale(self.normal, shift)),
            direction: d,
            inside: true,
        }
    }
}

/// Stamps an image onto a rectangular surface patch, keeping the scene's
/// lightness.
#[derive(Clone, Debug, PartialEq)]
pub struct Seal {
    pub origin: [f64; 3],
    /// Spans the image width, from the left edge to the right edge.
    pub axis_u: [f64; 3],
    /// Spans the image height, from the top edge to the bottom edge.
    pub axis_v: [f64; 3],
    pub stamp: Stamp,
    pub alpha_threshold: f64,
    pub slab_half_width: f64,
}

impl Seal {
    fn normal(&self) -> [f64; 3] {
        vec3::normalize(vec3::cross(self.axis_u, self.axis_v))
    }

    /// Rectangle coordinates of `x` if it lies in the slab over the patch.
    pub fn patch_coordinates(&self, x: [f64; 3]) -> Option<(f64, f64)> {
        let rel = vec3::sub(x, self.origin);
        if vec3::dot(rel, self.normal()).abs() > self.slab_half_width {
            return None;
        }
        let u = vec3::dot(rel, self.axis_u) / vec3::dot(self.axis_u, self.axis_u);
        let v = vec3::dot(rel, self.axis_v) / vec3::dot(self.axis_v, self.axis_v);
        ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then_some((u, v))
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        self.patch_coordinates(x).is_some()
    }

    /// Edited color as an HSL triple, or `None` where the base color passes
    /// through (outside the patch or below the alpha threshold).
    pub fn map_hsl(&self, x: [f64; 3], base: [f64; 3]) -> Option<[f64; 3]> {
        let (u, v) = self.patch_coordinates(x)?;
        let px = self.stamp.sample(u, v);
        if (px[3] as f64 / 255.0) < self.alpha_threshold {
            return None;
        }
        let stamp = [px[0], px[1], px[2]].map(|c| c as f64 / 255.0);
        Some(seal_blend_hsl(base, stamp))
    }

    pub fn map_color(&self, x: [f64; 3], base: [f64; 3]) -> [f64; 3] {
        self.map_hsl(x, base).map_or(base, hsl_to_rgb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProxyShape {
    Brush(Brush),
    Seal(Seal),
}

/// A resolved edit at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct EditProxy {
    pub t_edit: f64,
    pub shape: ProxyShape,
}

impl EditProxy {
    pub fn contains(&self, x: [f64; 3]) -> bool {
        match &self.shape {
            ProxyShape::Brush(b) => b.contains(x),
            ProxyShape::Seal(s) => s.contains(x),
        }
    }

    /// Corners of an axis-aligned box enclosing the region.
    pub fn bounding_corners(&self) -> Vec<[f64; 3]> {
        let pts: Vec<[f64; 3]> = match &self.shape {
            ProxyShape::Brush(b) => {
                let top = b.height() + b.radius;
                b.anchors
                    .iter()
                    .flat_map(|&a| {
                        [
                            vec3::sub(a, vec3::scale(b.normal, b.radius)),
                            vec3::add(a, vec3::scale(b.normal, top)),
                        ]
                    })
                    .flat_map(|c| {
                        let r = b.radius;
                        [[r, 0.0, 0.0], [-r, 0.0, 0.0], [0.0, r, 0.0], [0.0, -r, 0.0], [0.0, 0.0, r], [0.0, 0.0, -r]]
                            .map(|o| vec3::add(c, o))
                    })
                    .collect()
            }
            ProxyShape::Seal(s) => {
                let m = vec3::scale(s.normal(), s.slab_half_width);
                let mut v = Vec::new();
                for a in [0.0, 1.0] {
                    for b in [0.0, 1.0] {
                        let p = vec3::add(
                            s.origin,
                            vec3::add(vec3::scale(s.axis_u, a), vec3::scale(s.axis_v, b)),
                        );
                        v.push(vec3::add(p, m));
                        v.push(vec3::sub(p, m));
                    }
                }
                v
            }
        };
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &pts {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let mut corners = Vec::with_capacity(8);
        for &x in &[lo[0], hi[0]] {
            for &y in &[lo[1], hi[1]] {
                for &z in &[lo[2], hi[2]] {
                    corners.push([x, y, z]);
                }
            }
        }
        corners
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (inclusive) covering the region
    /// in `camera`, or `None` if no corner projects in front of it.
    pub fn projected_bounds(&self, camera: &Camera) -> Option<(u32, u32, u32, u32)> {
        let proj: Vec<[f64; 2]> = self
            .bounding_corners()
            .into_iter()
            .filter_map(|c| camera.project(c))
            .collect();
        if proj.len() < 8 {
            return None;
        }
        let (w, h) = (camera.width as f64, camera.height as f64);
        let x0 = proj.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let y0 = proj.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let x1 = proj.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(w - 1.0);
        let y1 = proj.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(h - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }
}
