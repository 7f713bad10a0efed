//! Differentiable pixel loss: encode → deform → canonical → composite → MSE,
//! with a hand-written backward pass through every stage.

use ndarray::Array2;
use rayon::prelude::*;

use crate::field::{
    activate_raw, encode_backward, encoded_width, sigmoid, DynamicField, FieldError,
};
use crate::numcore::MlpParams;
use crate::render::{composite, Ray, RaySamples, RenderError};
use crate::vec3;
use crate::Real;

/// One supervised ray.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRay<F> {
    pub origin: [F; 3],
    pub direction: [F; 3],
    pub time: F,
    pub samples: RaySamples<F>,
    pub target: [F; 3],
}

impl<F: Real> TrainRay<F> {
    pub fn new(ray: &Ray, time: F, samples: RaySamples<F>, target: [F; 3]) -> Self {
        Self {
            origin: vec3::from_f64(ray.origin),
            direction: vec3::from_f64(ray.direction),
            time,
            samples,
            target,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = [F; 3]> + '_ {
        self.samples
            .depths
            .iter()
            .map(|&s| vec3::add(self.origin, vec3::scale(self.direction, s)))
    }
}

/// Gradients shaped like the two networks of a [`DynamicField`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads<F> {
    pub deformation: MlpParams<F>,
    pub canonical: MlpParams<F>,
}

impl<F: Real> FieldGrads<F> {
    pub fn zeros_for(field: &DynamicField<F>) -> Self {
        Self {
            deformation: field.deformation.zeros_like(),
            canonical: field.canonical.zeros_like(),
        }
    }

    fn accumulate(&mut self, other: &Self) {
        self.deformation.accumulate(&other.deformation);
        self.canonical.accumulate(&other.canonical);
    }
}

/// Loss value, gradients and the rendered color of every ray.
#[derive(Clone, Debug)]
pub struct LossEval<F> {
    pub loss: F,
    pub grads: FieldGrads<F>,
    pub colors: Vec<[F; 3]>,
}

const CHUNK_RAYS: usize = 32;

/// Forward-only `L = (1/N) Σ ||C - target||²` using the plain batched query
/// path; independent of the backward machinery below.
pub fn pixel_loss<F: Real>(
    field: &DynamicField<F>,
    rays: &[TrainRay<F>],
    background: [F; 3],
) -> Result<F, RenderError> {
    let mut total = F::zero();
    for r in rays {
        let points: Vec<_> = r.points().collect();
        let dirs = vec![r.direction; points.len()];
        let times = vec![r.time; points.len()];
        let radiance = field.query_rows(&points, &dirs, &times)?;
        let px = composite(&radiance, &r.samples.depths, &r.samples.deltas, background)?;
        total += (0..3).map(|c| (px.color[c] - r.target[c]).powi(2)).sum::<F>();
    }
    Ok(total / F::lit(rays.len() as f64))
}

/// Loss and gradients over a ray batch. With `freeze_deformation` the
/// deformation gradient buffers stay exactly zero.
///
/// Rays are split into fixed-size chunks evaluated in parallel and summed in
/// chunk order, so results do not depend on the thread count.
pub fn pixel_loss_and_grad<F: Real>(
    field: &DynamicField<F>,
    rays: &[TrainRay<F>],
    background: [F; 3],
    freeze_deformation: bool,
) -> Result<LossEval<F>, RenderError> {
    if rays.is_empty() {
        return Err(RenderError::ZeroSamples);
    }
    let scale = F::lit(1.0 / rays.len() as f64);
    let parts: Vec<Result<LossEval<F>, RenderError>> = rays
        .par_chunks(CHUNK_RAYS)
        .map(|chunk| chunk_loss_and_grad(field, chunk, background, scale, freeze_deformation))
        .collect();
    let mut total = LossEval {
        loss: F::zero(),
        grads: FieldGrads::zeros_for(field),
        colors: Vec::with_capacity(rays.len()),
    };
    for p in parts {
        let p = p?;
        total.loss += p.loss;
        total.grads.accumulate(&p.grads);
        total.colors.extend(p.colors);
    }
    Ok(total)
}

fn chunk_loss_and_grad<F: Real>(
    field: &DynamicField<F>,
    rays: &[TrainRay<F>],
    background: [F; 3],
    scale: F,
    freeze_deformation: bool,
) -> Result<LossEval<F>, RenderError> {
    let cfg = *field.config();
    let offsets: Vec<usize> = rays
        .iter()
        .scan(0, |acc, r| {
            let o = *acc;
            *acc += r.samples.depths.len();
            Some(o)
        })
        .collect();
    let rows: usize = rays.iter().map(|r| r.samples.depths.len()).sum();

    let mut points = Vec::with_capacity(rows);
    let mut dirs = Vec::with_capacity(rows);
    let mut times = Vec::with_capacity(rows);
    for r in rays {
        if !(0.0..=1.0).contains(&r.time.as_f64()) {
            return Err(FieldError::TimeOutOfRange(r.time.as_f64()).into());
        }
        for p in r.points() {
            points.push(p);
            dirs.push(r.direction);
            times.push(r.time);
        }
    }

    // Deformation, skipped entirely at the canonical time.
    let moving: Vec<usize> = (0..rows)
        .filter(|&i| !field.is_canonical_time(times[i]))
        .collect();
    let mut warped = points.clone();
    let deform_tape = if moving.is_empty() {
        None
    } else {
        let mut feat = Array2::zeros((moving.len(), cfg.deformation_input_width()));
        for (r, &i) in moving.iter().enumerate() {
            let row = feat.row_mut(r).into_slice().expect("contiguous row");
            field.deformation_features(points[i], times[i], row);
        }
        let (dx, tape) = field
            .deformation
            .forward_batch(feat)
            .map_err(FieldError::from)?;
        for (r, &i) in moving.iter().enumerate() {
            let g = field.time_gate(times[i]);
            warped[i] = vec3::add(points[i], [dx[[r, 0]] * g, dx[[r, 1]] * g, dx[[r, 2]] * g]);
        }
        Some(tape)
    };

    let mut feat = Array2::zeros((rows, cfg.canonical_input_width()));
    for i in 0..rows {
        let row = feat.row_mut(i).into_slice().expect("contiguous row");
        field.canonical_features(warped[i], dirs[i], row);
    }
    let (raw, canon_tape) = field
        .canonical
        .forward_batch(feat)
        .map_err(FieldError::from)?;
    let radiance: Vec<_> = raw
        .rows()
        .into_iter()
        .map(|r| activate_raw(r.as_slice().expect("contiguous row")))
        .collect();

    // Composite forward and backward per ray.
    let mut raw_grad = Array2::<F>::zeros((rows, 4));
    let mut loss = F::zero();
    let mut colors = Vec::with_capacity(rays.len());
    let two = F::lit(2.0);
    for (ri, r) in rays.iter().enumerate() {
        let o = offsets[ri];
        let n = r.samples.depths.len();
        let samples = &radiance[o..o + n];
        let px = composite(samples, &r.samples.depths, &r.samples.deltas, background)?;
        let mut a = [F::zero(); 3];
        for c in 0..3 {
            let e = px.color[c] - r.target[c];
            loss += e * e * scale;
            a[c] = two * e * scale;
        }
        colors.push(px.color);

        // s_k = a · (c_k - bg); suffix[k] = Σ_{j>=k} w_j s_j
        let s: Vec<F> = samples
            .iter()
            .map(|smp| (0..3).map(|c| a[c] * (smp.color[c] - background[c])).sum())
            .collect();
        let mut suffix_after = F::zero();
        let mut t_next: Vec<F> = Vec::with_capacity(n);
        let mut trans = F::one();
        for (k, smp) in samples.iter().enumerate() {
            trans = trans * (-(smp.density * r.samples.deltas[k])).exp();
            t_next.push(trans);
        }
        for k in (0..n).rev() {
            let w = px.weights[k];
            let d_sigma = r.samples.deltas[k] * (t_next[k] * s[k] - suffix_after);
            suffix_after += w * s[k];
            let row = o + k;
            for c in 0..3 {
                let col = samples[k].color[c];
                raw_grad[[row, c]] = w * a[c] * col * (F::one() - col);
            }
            raw_grad[[row, 3]] = d_sigma * sigmoid(raw[[row, 3]]);
        }
    }

    let mut grads = FieldGrads::zeros_for(field);
    let need_input = !freeze_deformation && deform_tape.is_some();
    let feat_grad = field
        .canonical
        .backward_batch(canon_tape, raw_grad, &mut grads.canonical, need_input)
        .map_err(FieldError::from)?;

    if let (Some(tape), Some(feat_grad)) = (deform_tape, feat_grad) {
        let px = encoded_width(3, cfg.position_levels);
        let mut dx_grad = Array2::<F>::zeros((moving.len(), 3));
        for (r, &i) in moving.iter().enumerate() {
            let fg = feat_grad.row(i);
            let fg = &fg.as_slice().expect("contiguous row")[..px];
            let mut g = [F::zero(); 3];
            encode_backward(&warped[i], cfg.position_levels, fg, &mut g);
            let gate = field.time_gate(times[i]);
            for c in 0..3 {
                dx_grad[[r, c]] = g[c] * gate;
            }
        }
        field
            .deformation
            .backward_batch(tape, dx_grad, &mut grads.deformation, false)
            .map_err(FieldError::from)?;
    }

    Ok(LossEval {
        loss,
        grads,
        colors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::numcore::{finite_diff_check, ParamVec};
    use crate::render::{sample_ray, Stratification};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FieldConfig {
        FieldConfig {
            position_levels: 2,
            direction_levels: 1,
            time_levels: 1,
            width: 8,
            depth: 2,
            canonical_time: 0.0,
            time_gate: false,
            deformation_position_levels: None,
        }
    }

    fn random_rays(rng: &mut ChaCha8Rng, n: usize, samples: usize) -> Vec<TrainRay<f64>> {
        (0..n)
            .map(|i| {
                let d = vec3::normalize([
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                let ray = Ray {
                    origin: vec3::scale(d, -1.0),
                    direction: d,
                };
                let t = if i % 3 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
                let s = sample_ray(0.5, 1.5, samples, Stratification::Jitter(i as u64)).unwrap();
                TrainRay::new(&ray, t, s, [rng.random(), rng.random(), rng.random()])
            })
            .collect()
    }

    #[test]
    fn loss_matches_forward_only_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let field = DynamicField::<f64>::new(FieldConfig::fixture(), 3).unwrap();
        let rays = random_rays(&mut rng, 40, 8);
        let bg = [1.0, 1.0, 1.0];
        let ev = pixel_loss_and_grad(&field, &rays, bg, false).unwrap();
        let fwd = pixel_loss(&field, &rays, bg).unwrap();
        assert!((ev.loss - fwd).abs() < 1e-12, "{} vs {fwd}", ev.loss);
        assert_eq!(ev.colors.len(), 40);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let field = DynamicField::<f64>::new(tiny(), 4).unwrap();
        let rays = random_rays(&mut rng, 4, 2);
        let bg = [0.2, 0.5, 1.0];
        let ev = pixel_loss_and_grad(&field, &rays, bg, false).unwrap();
        let analytic =
            DynamicField::from_parts(*field.config(), ev.grads.deformation, ev.grads.canonical)
                .unwrap();
        let report = finite_diff_check(
            |f: &DynamicField<f64>| pixel_loss(f, &rays, bg).unwrap(),
            &field,
            &analytic,
            1e-6,
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.norm_rel_error < 1e-6, "{report:?}");
        assert!(report.max_abs_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, field.param_count());
    }

    #[test]
    fn gated_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = FieldConfig {
            time_gate: true,
            canonical_time: 0.3,
            deformation_position_levels: Some(1),
            ..tiny()
        };
        let field = DynamicField::<f64>::new(cfg, 6).unwrap();
        let rays = random_rays(&mut rng, 4, 2);
        let bg = [0.2, 0.5, 1.0];
        let ev = pixel_loss_and_grad(&field, &rays, bg, false).unwrap();
        let analytic = DynamicField::from_parts(cfg, ev.grads.deformation, ev.grads.canonical).unwrap();
        let report = finite_diff_check(
            |f: &DynamicField<f64>| pixel_loss(f, &rays, bg).unwrap(),
            &field,
            &analytic,
            1e-6,
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.norm_rel_error < 1e-6, "{report:?}");
        assert!(report.max_abs_error < 1e-9, "{report:?}");
    }

    #[test]
    fn frozen_deformation_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = DynamicField::<f64>::new(tiny(), 4).unwrap();
        let rays = random_rays(&mut rng, 12, 4);
        let ev = pixel_loss_and_grad(&field, &rays, [1.0; 3], true).unwrap();
        assert_eq!(ev.grads.deformation.norm_sq(), 0.0);
        assert!(ev.grads.canonical.norm_sq() > 0.0);
        let free = pixel_loss_and_grad(&field, &rays, [1.0; 3], false).unwrap();
        assert!(free.grads.deformation.norm_sq() > 0.0);
        assert_eq!(free.grads.canonical, ev.grads.canonical);
    }
}
