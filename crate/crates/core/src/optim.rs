//! Adam with L2-coupled weight decay, and spectral weight normalization.

use crate::backprop::Gradients;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix, DenseVector, SPECTRAL_ITERS, SPECTRAL_TOL};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to weight gradients.
    pub weight_decay: f64,
    /// Also apply the L2 term to biases.
    pub decay_biases: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decay_biases: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    weights: Vec<Moments>,
    biases: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            weights: params
                .weights
                .iter()
                .map(|w| Moments::new(w.as_slice().len()))
                .collect(),
            biases: params.biases.iter().map(|b| Moments::new(b.len())).collect(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn check_finite(values: &[f64], what: &str, layer: usize) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} gradient of layer {layer}")))
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    theta: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    cfg: &AdamConfig,
    decay: f64,
    c1: f64,
    c2: f64,
) {
    for (k, (p, &g)) in theta.iter_mut().zip(grad).enumerate() {
        let g = if decay != 0.0 { g + decay * *p } else { g };
        let m = &mut moments.m[k];
        let v = &mut moments.v[k];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam step. Parameters are untouched if any gradient
/// entry is non-finite.
pub fn adam_step(state: &mut OptimizerState, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
    if grads.weights.len() != params.weights.len()
        || grads.biases.len() != params.biases.len()
        || state.weights.len() != params.weights.len()
    {
        return Err(Error::InvalidConfig(
            "gradients, optimizer state and parameters disagree on layer count".into(),
        ));
    }
    for (i, (g, w)) in grads.weights.iter().zip(&params.weights).enumerate() {
        if g.shape() != w.shape() || state.weights[i].m.len() != w.as_slice().len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: g.shape(),
                right: w.shape(),
            });
        }
        check_finite(g.as_slice(), "weight", i)?;
    }
    for (i, (g, b)) in grads.biases.iter().zip(&params.biases).enumerate() {
        if g.len() != b.len() || state.biases[i].m.len() != b.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: (1, g.len()),
                right: (1, b.len()),
            });
        }
        check_finite(g.as_slice(), "bias", i)?;
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((w, g), mom) in params.weights.iter_mut().zip(&grads.weights).zip(&mut state.weights) {
        update(w.as_mut_slice(), g.as_slice(), mom, &cfg, cfg.weight_decay, c1, c2);
    }
    for ((b, g), mom) in params.biases.iter_mut().zip(&grads.biases).zip(&mut state.biases) {
        let decay = if cfg.decay_biases { cfg.weight_decay } else { 0.0 };
        update(b.as_mut_slice(), g.as_slice(), mom, &cfg, decay, c1, c2);
    }
    Ok(())
}

/// Rescales `w` so its spectral norm equals `lambda`. Returns `false` and
/// leaves `w` alone when it is the zero matrix.
pub fn normalize_spectral(w: &mut DenseMatrix, lambda: f64) -> bool {
    let sigma = spectral_norm(w, SPECTRAL_ITERS, SPECTRAL_TOL);
    if sigma == 0.0 {
        return false;
    }
    w.scale_in_place(lambda / sigma);
    true
}

/// Reprojects every weight matrix to spectral norm `lambda`. Biases are not
/// touched. The returned flags mark zero matrices that were left unchanged.
pub fn apply_weight_norm(params: &mut ModelParams, lambda: f64) -> Vec<bool> {
    params
        .weights
        .iter_mut()
        .map(|w| !normalize_spectral(w, lambda))
        .collect()
}

/// Zero gradients shaped like `params`.
pub fn zero_gradients(params: &ModelParams) -> Gradients {
    Gradients {
        weights: params
            .weights
            .iter()
            .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
            .collect(),
        biases: params.biases.iter().map(|b| DenseVector::zeros(b.len())).collect(),
        activation_grad_norms: vec![0.0; params.hidden_depth()],
    }
}
