use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RenderError;
use crate::Real;

/// Sample depths along one ray with the spacing used for quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples<F> {
    pub depths: Vec<F>,
    /// `depths[i + 1] - depths[i]`; the last entry is `(far - near) / n`.
    pub deltas: Vec<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stratification {
    /// Bin midpoints.
    Midpoint,
    /// One uniform draw per bin from a generator seeded with this value.
    Jitter(u64),
}

pub fn sample_ray<F: Real>(
    near: f64,
    far: f64,
    n_samples: usize,
    mode: Stratification,
) -> Result<RaySamples<F>, RenderError> {
    match mode {
        Stratification::Midpoint => sample_depths::<F, ChaCha8Rng>(near, far, n_samples, None),
        Stratification::Jitter(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_depths(near, far, n_samples, Some(&mut rng))
        }
    }
}

pub fn sample_depths<F: Real, R: Rng>(
    near: f64,
    far: f64,
    n_samples: usize,
    jitter: Option<&mut R>,
) -> Result<RaySamples<F>, RenderError> {
    if n_samples == 0 {
        return Err(RenderError::ZeroSamples);
    }
    if !(near < far) {
        return Err(RenderError::Camera(format!("near {near} >= far {far}")));
    }
    let bin = (far - near) / n_samples as f64;
    let depths: Vec<f64> = match jitter {
        None => (0..n_samples)
            .map(|i| near + (i as f64 + 0.5) * bin)
            .collect(),
        Some(rng) => (0..n_samples)
            .map(|i| near + (i as f64 + rng.random::<f64>()) * bin)
            .collect(),
    };
    let mut deltas = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let d = if i + 1 < n_samples {
            (depths[i + 1] - depths[i]).max(f64::MIN_POSITIVE)
        } else {
            bin
        };
        deltas.push(F::lit(d));
    }
    Ok(RaySamples {
        depths: depths.into_iter().map(F::lit).collect(),
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_midpoint() {
        let s = sample_ray::<f64>(0.0, 2.0, 1, Stratification::Midpoint).unwrap();
        assert_eq!(s.depths, vec![1.0]);
        assert_eq!(s.deltas, vec![2.0]);
    }

    #[test]
    fn four_midpoints() {
        let s = sample_depths::<f64, ChaCha8Rng>(0.0, 4.0, 4, None).unwrap();
        assert_eq!(s.depths, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(s.deltas, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_samples_is_an_error() {
        assert_eq!(
            sample_ray::<f32>(2.0, 6.0, 0, Stratification::Midpoint),
            Err(RenderError::ZeroSamples)
        );
    }

    #[test]
    fn jittered_depths_stay_in_their_bins() {
        for seed in 0..50 {
            let s = sample_ray::<f64>(2.0, 6.0, 64, Stratification::Jitter(seed)).unwrap();
            for (i, &d) in s.depths.iter().enumerate() {
                let lo = 2.0 + i as f64 * 4.0 / 64.0;
                assert!(d >= lo && d < lo + 4.0 / 64.0);
            }
            assert!(s.deltas.iter().all(|&d| d > 0.0));
            assert!(s.depths.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
