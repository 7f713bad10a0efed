use super::RenderError;
use crate::field::RadianceSample;
use crate::Real;

/// Composited pixel along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelResult<F> {
    pub color: [F; 3],
    /// `Σ w_i t_i` (not normalized by opacity).
    pub depth: F,
    pub opacity: F,
    pub weights: Vec<F>,
}

impl<F: Real> PixelResult<F> {
    /// Expected depth conditioned on hitting something.
    pub fn normalized_depth(&self) -> Option<F> {
        (self.opacity > F::zero()).then(|| self.depth / self.opacity)
    }
}

/// Emission-absorption quadrature:
/// `α_i = 1 - exp(-σ_i δ_i)`, `T_i = Π_{j<i} (1 - α_j)`, `w_i = T_i α_i`,
/// `C = Σ w_i c_i + (1 - Σ w_i) · background`.
pub fn composite<F: Real>(
    samples: &[RadianceSample<F>],
    depths: &[F],
    deltas: &[F],
    background: [F; 3],
) -> Result<PixelResult<F>, RenderError> {
    if samples.len() != deltas.len() || samples.len() != depths.len() {
        return Err(RenderError::LengthMismatch {
            samples: samples.len(),
            spacings: deltas.len(),
        });
    }
    let mut transmittance = F::one();
    let mut color = [F::zero(); 3];
    let mut depth = F::zero();
    let mut opacity = F::zero();
    let mut weights = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let sd = s.density * deltas[i];
        if s.density < F::zero() || deltas[i] < F::zero() || !sd.is_finite() {
            return Err(RenderError::InvalidSample { index: i });
        }
        let alpha = F::one() - (-sd).exp();
        let w = transmittance * alpha;
        for c in 0..3 {
            color[c] += w * s.color[c];
        }
        depth += w * depths[i];
        opacity += w;
        weights.push(w);
        transmittance = transmittance * (F::one() - alpha);
    }
    let rest = F::one() - opacity;
    for c in 0..3 {
        color[c] += rest * background[c];
    }
    Ok(PixelResult {
        color,
        depth,
        opacity,
        weights,
    })
}
