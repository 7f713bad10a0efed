use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{MlpError, MlpParams, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub first_moment: MlpParams<F>,
    pub second_moment: MlpParams<F>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &MlpParams<F>, config: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before anything is
/// written, so a rejected step leaves both `params` and `state` untouched.
pub fn adam_step<F: Real>(
    params: &mut MlpParams<F>,
    grads: &MlpParams<F>,
    state: &mut AdamState<F>,
    learning_rate: F,
) -> Result<(), MlpError> {
    if !(learning_rate > F::zero()) || !learning_rate.is_finite() {
        return Err(MlpError::LearningRate(learning_rate.as_f64()));
    }
    for (i, ((p, g), (m, v))) in params
        .layers()
        .iter()
        .zip(grads.layers())
        .zip(state.first_moment.layers().iter().zip(state.second_moment.layers()))
        .enumerate()
    {
        let dim = p.weights.dim();
        if g.weights.dim() != dim
            || m.weights.dim() != dim
            || v.weights.dim() != dim
            || g.biases.len() != p.biases.len()
            || m.biases.len() != p.biases.len()
            || v.biases.len() != p.biases.len()
        {
            return Err(MlpError::GradShape { layer: i });
        }
        if g.weights.iter().chain(g.biases.iter()).any(|x| !x.is_finite()) {
            return Err(MlpError::NonFinite {
                layer: i,
                what: "gradient",
            });
        }
    }
    if params.layers().len() != grads.layers().len()
        || params.layers().len() != state.first_moment.layers().len()
    {
        return Err(MlpError::GradShape {
            layer: params.layers().len().min(grads.layers().len()),
        });
    }

    state.step_count += 1;
    let t = state.step_count as f64;
    let cfg = state.config;
    let beta1 = F::lit(cfg.beta1);
    let beta2 = F::lit(cfg.beta2);
    let one_m_b1 = F::lit(1.0 - cfg.beta1);
    let one_m_b2 = F::lit(1.0 - cfg.beta2);
    let bc1 = F::lit(1.0 - cfg.beta1.powf(t));
    let bc2 = F::lit(1.0 - cfg.beta2.powf(t));
    let eps = F::lit(cfg.epsilon);

    let update = |p: &mut F, m: &mut F, v: &mut F, &g: &F| {
        *m = beta1 * *m + one_m_b1 * g;
        *v = beta2 * *v + one_m_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    };

    let first = state.first_moment.layers_mut();
    let second = state.second_moment.layers_mut();
    for (((p, g), m), v) in params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers())
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        Zip::from(&mut p.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(update);
        Zip::from(&mut p.biases)
            .and(&mut m.biases)
            .and(&mut v.biases)
            .and(&g.biases)
            .for_each(update);
    }
    Ok(())
}
