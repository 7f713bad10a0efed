use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer}: widths must be non-zero")]
    ZeroWidth { layer: usize },
    #[error("layer {layer}: expects input width {expected}, got {found}")]
    InputWidth {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: weight shape {found:?} does not match declared ({expected:?})")]
    WeightShape {
        layer: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("output gradient has shape {found:?}, expected {expected:?}")]
    OutputGradShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("stale or mismatched tape: {0}")]
    StaleTape(&'static str),
    #[error("layer {layer}: non-finite {what}")]
    NonFinite { layer: usize, what: &'static str },
    #[error("layer {layer}: gradient shape does not match parameters")]
    GradShape { layer: usize },
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => F::one() / (F::one() + (-z).exp()),
            Activation::None => z,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU at exactly 0 is 0.
    #[inline]
    pub fn derivative<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = Activation::Sigmoid.apply(z);
                s * (F::one() - s)
            }
            Activation::None => F::one(),
        }
    }

    fn code(self) -> u64 {
        match self {
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::None => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            in_width,
            out_width,
            activation,
        }
    }
}

/// Dense layer `y = act(W x + b)`; `weights` has shape `(out_width, in_width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    pub weights: Array2<F>,
    pub biases: Array1<F>,
    pub activation: Activation,
}

impl<F: Real> Layer<F> {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.weights.ncols(), self.weights.nrows(), self.activation)
    }
}

/// Parameters of a feed-forward network. Gradients and optimizer moments use
/// the same type, so every buffer produced by the backward pass can be handed
/// to the optimizer without reshaping.
#[derive(Clone, Debug)]
pub struct MlpParams<F> {
    layers: Vec<Layer<F>>,
    version: u64,
}

impl<F: PartialEq> PartialEq for MlpParams<F> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediates cached by one forward pass and consumed by one backward pass.
#[derive(Debug)]
pub struct Tape<F> {
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
    signature: u64,
    version: u64,
}

impl<F> Tape<F> {
    /// Number of layers recorded.
    pub fn len(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre_activations.is_empty()
    }

    pub fn pre_activations(&self) -> &[Array2<F>] {
        &self.pre_activations
    }

    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), MlpError> {
    if specs.is_empty() {
        return Err(MlpError::Empty);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_width == 0 || s.out_width == 0 {
            return Err(MlpError::ZeroWidth { layer: i });
        }
        if i > 0 && specs[i - 1].out_width != s.in_width {
            return Err(MlpError::InputWidth {
                layer: i,
                expected: s.in_width,
                found: specs[i - 1].out_width,
            });
        }
    }
    Ok(())
}

fn signature_of(specs: impl Iterator<Item = LayerSpec>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in specs {
        for v in [s.in_width as u64, s.out_width as u64, s.activation.code()] {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl<F: Real> MlpParams<F> {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, MlpError> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|s| {
                let limit = (6.0 / (s.in_width + s.out_width) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let weights = Array2::from_shape_fn((s.out_width, s.in_width), |_| {
                    F::lit(dist.sample(rng))
                });
                Layer {
                    weights,
                    biases: Array1::zeros(s.out_width),
                    activation: s.activation,
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, MlpError> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|s| Layer {
                weights: Array2::zeros((s.out_width, s.in_width)),
                biases: Array1::zeros(s.out_width),
                activation: s.activation,
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self, MlpError> {
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.weights.nrows() {
                return Err(MlpError::WeightShape {
                    layer: i,
                    expected: (l.biases.len(), l.weights.ncols()),
                    found: l.weights.dim(),
                });
            }
        }
        let specs: Vec<_> = layers.iter().map(Layer::spec).collect();
        validate_specs(&specs)?;
        let out = Self { layers, version: 0 };
        out.check_finite()?;
        Ok(out)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.specs()).expect("specs already validated")
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Mutable access; invalidates any outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> MlpParams<G> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.mapv(|v| G::lit(v.as_f64())),
                    biases: l.biases.mapv(|v| G::lit(v.as_f64())),
                    activation: l.activation,
                })
                .collect(),
            version: 0,
        }
    }

    pub fn check_finite(&self) -> Result<(), MlpError> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().any(|v| !v.is_finite()) {
                return Err(MlpError::NonFinite {
                    layer: i,
                    what: "weights",
                });
            }
            if l.biases.iter().any(|v| !v.is_finite()) {
                return Err(MlpError::NonFinite {
                    layer: i,
                    what: "biases",
                });
            }
        }
        Ok(())
    }

    /// Order-sensitive hash over the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = signature_of(self.layers.iter().map(Layer::spec));
        for l in &self.layers {
            for v in l.weights.iter().chain(l.biases.iter()) {
                h ^= v.bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Flat view in layer order, weights (row-major) then biases per layer.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.biases.iter().copied());
        }
        out
    }

    pub fn get_flat(&self, mut index: usize) -> Option<F> {
        for l in &self.layers {
            let nw = l.weights.len();
            if index < nw {
                return Some(l.weights.as_slice().expect("standard layout")[index]);
            }
            index -= nw;
            if index < l.biases.len() {
                return Some(l.biases[index]);
            }
            index -= l.biases.len();
        }
        None
    }

    pub fn set_flat(&mut self, mut index: usize, value: F) -> bool {
        self.version += 1;
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                l.weights.as_slice_mut().expect("standard layout")[index] = value;
                return true;
            }
            index -= nw;
            if index < l.biases.len() {
                l.biases[index] = value;
                return true;
            }
            index -= l.biases.len();
        }
        false
    }

    pub fn norm_sq(&self) -> F {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .map(|&v| v * v)
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.biases.dim() == b.biases.dim())
    }

    /// `self += other`; shapes must agree.
    pub fn accumulate(&mut self, other: &Self) {
        assert!(self.same_shape(other), "accumulating mismatched gradients");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }

    pub fn scale(&mut self, s: F) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|v| v * s);
            l.biases.mapv_inplace(|v| v * s);
        }
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, Tape<F>), MlpError> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        let (y, tape) = self.forward_batch(x)?;
        Ok((y.into_raw_vec_and_offset().0, tape))
    }

    /// Forward pass over a `(rows, in_width)` batch.
    pub fn forward_batch(&self, input: Array2<F>) -> Result<(Array2<F>, Tape<F>), MlpError> {
        let rows = input.nrows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            if x.ncols() != layer.weights.ncols() {
                return Err(MlpError::InputWidth {
                    layer: i,
                    expected: layer.weights.ncols(),
                    found: x.ncols(),
                });
            }
            let mut z = Array2::zeros((rows, layer.weights.nrows()));
            general_mat_mul(F::one(), &x, &layer.weights.t(), F::zero(), &mut z);
            z += &layer.biases;
            let act = layer.activation;
            let a = match act {
                Activation::None => z.clone(),
                _ => z.mapv(|v| act.apply(v)),
            };
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                inputs,
                pre_activations,
                signature: signature_of(self.layers.iter().map(Layer::spec)),
                version: self.version,
            },
        ))
    }

    /// Single-vector backward pass returning fresh parameter gradients and
    /// the gradient with respect to the input.
    pub fn backward(
        &self,
        tape: Tape<F>,
        output_grad: &[F],
    ) -> Result<(MlpParams<F>, Vec<F>), MlpError> {
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .expect("row vector");
        let mut grads = self.zeros_like();
        let dx = self
            .backward_batch(tape, g, &mut grads, true)?
            .expect("input gradient requested");
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    /// Batched backward pass. Parameter gradients are added into `grads`;
    /// the input gradient is computed only when `want_input_grad` is set.
    pub fn backward_batch(
        &self,
        tape: Tape<F>,
        output_grad: Array2<F>,
        grads: &mut MlpParams<F>,
        want_input_grad: bool,
    ) -> Result<Option<Array2<F>>, MlpError> {
        if tape.signature != signature_of(self.layers.iter().map(Layer::spec)) {
            return Err(MlpError::StaleTape("tape recorded on a different architecture"));
        }
        if tape.version != self.version {
            return Err(MlpError::StaleTape("parameters changed since the forward pass"));
        }
        if !self.same_shape(grads) {
            return Err(MlpError::GradShape { layer: 0 });
        }
        let rows = tape.rows();
        let expected = (rows, self.out_width());
        if output_grad.dim() != expected {
            return Err(MlpError::OutputGradShape {
                expected,
                found: output_grad.dim(),
            });
        }
        let Tape {
            inputs,
            pre_activations,
            ..
        } = tape;
        let mut g = output_grad;
        for (i, (x, z)) in inputs.into_iter().zip(pre_activations).enumerate().rev() {
            let layer = &self.layers[i];
            match layer.activation {
                Activation::None => {}
                Activation::Relu => Zip::from(&mut g).and(&z).for_each(|g, &z| {
                    if z <= F::zero() {
                        *g = F::zero();
                    }
                }),
                Activation::Sigmoid => Zip::from(&mut g)
                    .and(&z)
                    .for_each(|g, &z| *g *= Activation::Sigmoid.derivative(z)),
            }
            let gl = &mut grads.layers[i];
            general_mat_mul(F::one(), &g.t(), &x, F::one(), &mut gl.weights);
            gl.biases += &g.sum_axis(Axis(0));
            if i > 0 || want_input_grad {
                let mut dx = Array2::zeros((rows, layer.weights.ncols()));
                general_mat_mul(F::one(), &g, &layer.weights, F::zero(), &mut dx);
                g = dx;
            } else {
                return Ok(None);
            }
        }
        Ok(Some(g))
    }
}
