//! Dynamic radiance field: a deformation network mapping `(x, t)` to a
//! displacement into canonical space, and a time-free canonical network
//! mapping `(x + Δx, d)` to color and density.

mod encoding;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Activation, LayerSpec, MlpError, MlpParams, ParamVec};
use crate::vec3;
use crate::Real;

pub use encoding::{encode, encode_backward, encode_into, encoded_width};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{net} network: {reason}")]
    Architecture { net: &'static str, reason: String },
    #[error(transparent)]
    Network(#[from] MlpError),
}

/// Hyperparameters fixing the architecture of a [`DynamicField`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub position_levels: usize,
    pub direction_levels: usize,
    pub time_levels: usize,
    /// Hidden width of both networks.
    pub width: usize,
    /// Number of ReLU hidden layers in each network.
    pub depth: usize,
    /// Time at which the deformation is bypassed to exactly zero.
    pub canonical_time: f64,
    /// Scale the deformation network output by `t - canonical_time`, so the
    /// displacement also tends to zero continuously near the canonical time.
    #[serde(default)]
    pub time_gate: bool,
    /// Positional frequency levels of the deformation input; `None` uses
    /// `position_levels`.
    #[serde(default)]
    pub deformation_position_levels: Option<usize>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            position_levels: 10,
            direction_levels: 4,
            time_levels: 6,
            width: 128,
            depth: 8,
            canonical_time: 0.0,
            time_gate: false,
            deformation_position_levels: None,
        }
    }
}

impl FieldConfig {
    /// Width-32 variant used by unit fixtures.
    pub fn fixture() -> Self {
        Self {
            width: 32,
            ..Self::default()
        }
    }

    pub fn deformation_levels(&self) -> usize {
        self.deformation_position_levels.unwrap_or(self.position_levels)
    }

    pub fn deformation_input_width(&self) -> usize {
        encoded_width(3, self.deformation_levels()) + encoded_width(1, self.time_levels)
    }

    pub fn canonical_input_width(&self) -> usize {
        encoded_width(3, self.position_levels) + encoded_width(3, self.direction_levels)
    }

    fn specs(&self, input: usize, output: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.depth + 1);
        let mut w = input;
        for _ in 0..self.depth {
            specs.push(LayerSpec::new(w, self.width, Activation::Relu));
            w = self.width;
        }
        specs.push(LayerSpec::new(w, output, Activation::None));
        specs
    }

    pub fn deformation_specs(&self) -> Vec<LayerSpec> {
        self.specs(self.deformation_input_width(), 3)
    }

    pub fn canonical_specs(&self) -> Vec<LayerSpec> {
        self.specs(self.canonical_input_width(), 4)
    }
}

/// Emitted color in `[0, 1]^3` and non-negative density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample<F> {
    pub color: [F; 3],
    pub density: F,
}

/// Anything that can be queried for radiance at a point, direction and time.
pub trait RadianceField<F: Real>: Sync {
    fn query(&self, x: [F; 3], d: [F; 3], t: F) -> Result<RadianceSample<F>, FieldError>;

    /// Queries many points at a single time. Implementations may batch.
    fn query_batch(
        &self,
        points: &[[F; 3]],
        dirs: &[[F; 3]],
        t: F,
    ) -> Result<Vec<RadianceSample<F>>, FieldError> {
        points
            .iter()
            .zip(dirs)
            .map(|(&x, &d)| self.query(x, d, t))
            .collect()
    }
}

#[inline]
pub fn softplus<F: Real>(z: F) -> F {
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    Activation::Sigmoid.apply(z)
}

/// Maps the canonical network's four raw outputs to a radiance sample.
#[inline]
pub fn activate_raw<F: Real>(raw: &[F]) -> RadianceSample<F> {
    RadianceSample {
        color: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
        density: softplus(raw[3]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicField<F> {
    pub deformation: MlpParams<F>,
    pub canonical: MlpParams<F>,
    config: FieldConfig,
}

fn check_time(t: f64) -> Result<(), FieldError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FieldError::TimeOutOfRange(t));
    }
    Ok(())
}

impl<F: Real> DynamicField<F> {
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deformation = MlpParams::new(&config.deformation_specs(), &mut rng)?;
        let canonical = MlpParams::new(&config.canonical_specs(), &mut rng)?;
        Self::from_parts(config, deformation, canonical)
    }

    /// Random networks whose deformation output layer is zero, so training
    /// starts from a static scene.
    pub fn with_static_start(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        let mut field = Self::new(config, seed)?;
        let out = field
            .deformation
            .layers_mut()
            .last_mut()
            .expect("networks have an output layer");
        out.weights.fill(F::zero());
        out.biases.fill(F::zero());
        Ok(field)
    }

    pub fn zeros(config: FieldConfig) -> Result<Self, FieldError> {
        Self::from_parts(
            config,
            MlpParams::zeros(&config.deformation_specs())?,
            MlpParams::zeros(&config.canonical_specs())?,
        )
    }

    /// Assembles a field from explicit networks, checking that their input and
    /// output widths agree with the encodings in `config`.
    pub fn from_parts(
        config: FieldConfig,
        deformation: MlpParams<F>,
        canonical: MlpParams<F>,
    ) -> Result<Self, FieldError> {
        check_time(config.canonical_time)?;
        let arch = |net: &'static str, p: &MlpParams<F>, input: usize, output: usize| {
            if p.in_width() != input || p.out_width() != output {
                return Err(FieldError::Architecture {
                    net,
                    reason: format!(
                        "expected {input} -> {output}, found {} -> {}",
                        p.in_width(),
                        p.out_width()
                    ),
                });
            }
            Ok(())
        };
        arch("deformation", &deformation, config.deformation_input_width(), 3)?;
        arch("canonical", &canonical, config.canonical_input_width(), 4)?;
        deformation.check_finite()?;
        canonical.check_finite()?;
        Ok(Self {
            deformation,
            canonical,
            config,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn cast<G: Real>(&self) -> DynamicField<G> {
        DynamicField {
            deformation: self.deformation.cast(),
            canonical: self.canonical.cast(),
            config: self.config,
        }
    }

    #[inline]
    pub fn is_canonical_time(&self, t: F) -> bool {
        t.as_f64() == self.config.canonical_time
    }

    /// Factor applied to the deformation network output: `t - canonical_time`
    /// with the time gate on, 1 otherwise.
    #[inline]
    pub fn time_gate(&self, t: F) -> F {
        if self.config.time_gate {
            t - F::lit(self.config.canonical_time)
        } else {
            F::one()
        }
    }

    pub fn deformation_features(&self, x: [F; 3], t: F, out: &mut [F]) {
        let levels = self.config.deformation_levels();
        let px = encoded_width(3, levels);
        encode_into(&x, levels, &mut out[..px]);
        encode_into(&[t], self.config.time_levels, &mut out[px..]);
    }

    pub fn canonical_features(&self, x: [F; 3], d: [F; 3], out: &mut [F]) {
        let px = encoded_width(3, self.config.position_levels);
        encode_into(&x, self.config.position_levels, &mut out[..px]);
        encode_into(&d, self.config.direction_levels, &mut out[px..]);
    }

    /// Displacement into canonical space, `Ψ_t(x, t)` times the time gate.
    /// Exactly zero at the canonical time, whatever the network weights.
    pub fn deform(&self, x: [F; 3], t: F) -> Result<[F; 3], FieldError> {
        check_time(t.as_f64())?;
        if self.is_canonical_time(t) {
            return Ok([F::zero(); 3]);
        }
        let mut feat = vec![F::zero(); self.config.deformation_input_width()];
        self.deformation_features(x, t, &mut feat);
        let (y, _) = self.deformation.forward(&feat)?;
        let g = self.time_gate(t);
        Ok([y[0] * g, y[1] * g, y[2] * g])
    }

    /// Time-free canonical radiance.
    pub fn canonical_query(&self, x: [F; 3], d: [F; 3]) -> Result<RadianceSample<F>, FieldError> {
        let n = vec3::dot(d, d).as_f64().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(FieldError::NonUnitDirection(n));
        }
        let mut feat = vec![F::zero(); self.config.canonical_input_width()];
        self.canonical_features(x, d, &mut feat);
        let (raw, _) = self.canonical.forward(&feat)?;
        let s = activate_raw(&raw);
        if !s.density.is_finite() || s.color.iter().any(|c| !c.is_finite()) {
            return Err(FieldError::NonFinite("radiance"));
        }
        Ok(s)
    }

    /// `canonical_query(x + deform(x, t), d)`.
    pub fn field_query(&self, x: [F; 3], d: [F; 3], t: F) -> Result<RadianceSample<F>, FieldError> {
        let dx = self.deform(x, t)?;
        self.canonical_query(vec3::add(x, dx), d)
    }

    /// Batched evaluation with per-row times.
    pub fn query_rows(
        &self,
        points: &[[F; 3]],
        dirs: &[[F; 3]],
        times: &[F],
    ) -> Result<Vec<RadianceSample<F>>, FieldError> {
        let n = points.len();
        assert_eq!(dirs.len(), n);
        assert_eq!(times.len(), n);
        for &t in times {
            check_time(t.as_f64())?;
        }
        let mut warped = points.to_vec();
        let moving: Vec<usize> = (0..n).filter(|&i| !self.is_canonical_time(times[i])).collect();
        if !moving.is_empty() {
            let w = self.config.deformation_input_width();
            let mut feat = Array2::zeros((moving.len(), w));
            for (r, &i) in moving.iter().enumerate() {
                let row = feat.row_mut(r).into_slice().expect("contiguous row");
                self.deformation_features(points[i], times[i], row);
            }
            let (dx, _) = self.deformation.forward_batch(feat)?;
            for (r, &i) in moving.iter().enumerate() {
                let g = self.time_gate(times[i]);
                warped[i] = vec3::add(points[i], [dx[[r, 0]] * g, dx[[r, 1]] * g, dx[[r, 2]] * g]);
            }
        }
        let w = self.config.canonical_input_width();
        let mut feat = Array2::zeros((n, w));
        for i in 0..n {
            let row = feat.row_mut(i).into_slice().expect("contiguous row");
            self.canonical_features(warped[i], dirs[i], row);
        }
        let (raw, _) = self.canonical.forward_batch(feat)?;
        let out: Vec<_> = raw
            .rows()
            .into_iter()
            .map(|r| activate_raw(r.as_slice().expect("contiguous row")))
            .collect();
        if out
            .iter()
            .any(|s| !s.density.is_finite() || s.color.iter().any(|c| !c.is_finite()))
        {
            return Err(FieldError::NonFinite("radiance"));
        }
        Ok(out)
    }

    /// Exact fingerprint of the deformation network weights.
    pub fn deformation_fingerprint(&self) -> u64 {
        self.deformation.fingerprint()
    }
}

impl<F: Real> RadianceField<F> for DynamicField<F> {
    fn query(&self, x: [F; 3], d: [F; 3], t: F) -> Result<RadianceSample<F>, FieldError> {
        self.field_query(x, d, t)
    }

    fn query_batch(
        &self,
        points: &[[F; 3]],
        dirs: &[[F; 3]],
        t: F,
    ) -> Result<Vec<RadianceSample<F>>, FieldError> {
        self.query_rows(points, dirs, &vec![t; points.len()])
    }
}

/// Parameters of both networks, deformation first.
impl<F: Real> ParamVec<F> for DynamicField<F> {
    fn param_count(&self) -> usize {
        self.deformation.num_params() + self.canonical.num_params()
    }

    fn param(&self, index: usize) -> F {
        let nd = self.deformation.num_params();
        if index < nd {
            self.deformation.param(index)
        } else {
            self.canonical.param(index - nd)
        }
    }

    fn set_param(&mut self, index: usize, value: F) {
        let nd = self.deformation.num_params();
        if index < nd {
            self.deformation.set_param(index, value)
        } else {
            self.canonical.set_param(index - nd, value)
        }
    }
}
