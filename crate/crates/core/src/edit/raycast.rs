use super::EditError;
use crate::field::RadianceField;
use crate::render::{render_pixels, Camera, RenderOptions};
use crate::vec3;

/// Minimum accumulated opacity for a stroke pixel to count as a hit.
pub const HIT_OPACITY: f64 = 0.5;

/// Surface point under each stroke pixel at time `t`: the ray point at the
/// opacity-normalized expected depth, with midpoint sampling. Pixels whose
/// opacity stays below [`HIT_OPACITY`] are reported as `None`.
pub fn raycast_stroke<R: RadianceField<f32> + ?Sized>(
    field: &R,
    camera: &Camera,
    t: f64,
    pixels: &[[u32; 2]],
    n_samples: usize,
) -> Result<Vec<Option<[f64; 3]>>, EditError> {
    let px: Vec<(u32, u32)> = pixels.iter().map(|p| (p[0], p[1])).collect();
    let opts = RenderOptions {
        n_samples,
        background: [0.0; 3],
        stratified_seed: None,
    };
    let results = render_pixels(field, camera, t as f32, &px, &opts)?;
    let mut hits = Vec::with_capacity(px.len());
    for (&(x, y), r) in px.iter().zip(&results) {
        let hit = match r.normalized_depth() {
            Some(depth) if r.opacity as f64 >= HIT_OPACITY => {
                let ray = camera.ray(x, y)?;
                Some(ray.at(depth as f64))
            }
            _ => None,
        };
        hits.push(hit);
    }
    if hits.iter().all(Option::is_none) {
        return Err(EditError::NoSurface);
    }
    Ok(hits)
}

/// Mean of the hit points, ignoring misses.
pub fn hit_centroid(hits: &[Option<[f64; 3]>]) -> Option<[f64; 3]> {
    let pts: Vec<_> = hits.iter().flatten().collect();
    if pts.is_empty() {
        return None;
    }
    let sum = pts.iter().fold([0.0; 3], |a, &&p| vec3::add(a, p));
    Some(vec3::scale(sum, 1.0 / pts.len() as f64))
}
