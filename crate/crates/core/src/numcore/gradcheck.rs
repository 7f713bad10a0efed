use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{MlpParams, Real};

/// Flat, indexable view over a parameter set.
pub trait ParamVec<F> {
    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> F;
    fn set_param(&mut self, index: usize, value: F);
}

impl<F: Real> ParamVec<F> for MlpParams<F> {
    fn param_count(&self) -> usize {
        self.num_params()
    }

    fn param(&self, index: usize) -> F {
        self.get_flat(index).expect("index in range")
    }

    fn set_param(&mut self, index: usize, value: F) {
        assert!(self.set_flat(index, value), "index in range");
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("finite-difference step must be positive, got {0}")]
    Epsilon(f64),
    #[error("relative-error floor must be positive, got {0}")]
    Floor(f64),
    #[error("analytic gradient has {found} entries, parameters have {expected}")]
    Shape { expected: usize, found: usize },
    #[error("loss is not finite at coordinate {0:?}")]
    NonFiniteLoss(Option<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|a - n| / max(floor, |a|, |n|)`.
    pub max_rel_error: f64,
    /// Max over checked coordinates of `|a - n|`.
    pub max_abs_error: f64,
    /// `||a - n|| / max(||a||, ||n||)` over the checked coordinates, zero
    /// when both vectors vanish.
    pub norm_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The relative error of a coordinate is `|a - n| / max(floor, |a|, |n|)`,
/// so `floor` sets the gradient magnitude below which differences are
/// measured in absolute terms. When `sample_size` is `Some((k, seed))`, only
/// `k` coordinates drawn without replacement are checked; otherwise every
/// coordinate is.
pub fn finite_diff_check<F, P, L>(
    mut loss: L,
    params: &P,
    analytic: &P,
    epsilon: F,
    floor: f64,
    sample_size: Option<(usize, u64)>,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Real,
    P: ParamVec<F> + Clone,
    L: FnMut(&P) -> F,
{
    if !(epsilon > F::zero()) || !epsilon.is_finite() {
        return Err(GradCheckError::Epsilon(epsilon.as_f64()));
    }
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(GradCheckError::Floor(floor));
    }
    let n = params.param_count();
    if analytic.param_count() != n {
        return Err(GradCheckError::Shape {
            expected: n,
            found: analytic.param_count(),
        });
    }
    if !loss(params).is_finite() {
        return Err(GradCheckError::NonFiniteLoss(None));
    }
    let coords: Vec<usize> = match sample_size {
        Some((k, seed)) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        norm_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let two = F::lit(2.0);
    let (mut diff_sq, mut analytic_sq, mut numeric_sq) = (0.0f64, 0.0f64, 0.0f64);
    for &i in &coords {
        let orig = params.param(i);
        probe.set_param(i, orig + epsilon);
        let up = loss(&probe);
        probe.set_param(i, orig - epsilon);
        let down = loss(&probe);
        probe.set_param(i, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(GradCheckError::NonFiniteLoss(Some(i)));
        }
        let numeric = ((up - down) / (two * epsilon)).as_f64();
        let a = analytic.param(i).as_f64();
        let abs = (a - numeric).abs();
        let rel = abs / floor.max(a.abs()).max(numeric.abs());
        report.max_abs_error = report.max_abs_error.max(abs);
        diff_sq += abs * abs;
        analytic_sq += a * a;
        numeric_sq += numeric * numeric;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    let scale = analytic_sq.max(numeric_sq).sqrt();
    if scale > 0.0 {
        report.norm_rel_error = diff_sq.sqrt() / scale;
    }
    Ok(report)
}
