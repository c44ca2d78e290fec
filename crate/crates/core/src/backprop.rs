//! Hand-derived reverse pass for the forward computation in [`crate::model`].
//!
//! With `G_i = ∂l/∂Y'_i` and `P_i = Op·G_i`:
//!
//! ```text
//! dW_{i-1} = D_{i-1}ᵀ · P_i        D = dropped layer input
//! db_{i-1} = column sums of G_i
//! dY_{i-1} = (P_i · W_{i-1}ᵀ) ⊙ M_{i-1}   M = dropout multipliers
//! ```
//!
//! Energy normalization scales are treated as constants.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph_ops::Operator;
use crate::linalg::{
    frobenius_norm, matmul_nt, matmul_tn, relu_mask, softmax_rows, spmm, DenseMatrix,
    DenseVector,
};
use crate::model::{forward, ForwardCache, Mode, ModelParams, PatchConfig};
use twofloat::TwoFloat;

/// Parameter gradients plus `‖∂l/∂Y_i‖_F` for hidden layers `1 … n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseVector>,
    pub activation_grad_norms: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(DenseMatrix::is_finite)
            && self
                .biases
                .iter()
                .all(|b| b.as_slice().iter().all(|x| x.is_finite()))
    }
}

/// `(softmax(Y') − Z)/|mask|` on masked rows, zero elsewhere.
pub fn output_gradient(logits: &DenseMatrix, targets: &DenseMatrix, mask: &[usize]) -> Result<DenseMatrix> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "output_gradient",
            left: logits.shape(),
            right: targets.shape(),
        });
    }
    let probs = softmax_rows(logits);
    let scale = 1.0 / mask.len() as f64;
    let mut g = DenseMatrix::zeros(logits.rows(), logits.cols());
    for &i in mask {
        for ((o, p), z) in g.row_mut(i).iter_mut().zip(probs.row(i)).zip(targets.row(i)) {
            *o = (p - z) * scale;
        }
    }
    Ok(g)
}

fn audit(cache: &ForwardCache<'_>, params: &ModelParams, grad_out: &DenseMatrix) -> Result<()> {
    let n = params.hidden_depth();
    let mismatch = |what: String| Err(Error::CacheMismatch(what));
    if cache.hidden.len() != n || cache.pre_activations.len() != n {
        return mismatch(format!(
            "cache holds {} hidden layers, params have {n}",
            cache.hidden.len()
        ));
    }
    if cache.dropout_masks.len() != n + 1 || cache.energy_scales.len() != n || cache.skip_applied.len() != n {
        return mismatch("cache bookkeeping vectors have the wrong length".into());
    }
    for i in 0..=n {
        let y = cache.layer_input(i);
        if y.cols() != params.weights[i].rows() {
            return mismatch(format!(
                "layer {i} input {:?} does not fit weight {:?}",
                y.shape(),
                params.weights[i].shape()
            ));
        }
    }
    if grad_out.shape() != cache.logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward",
            left: grad_out.shape(),
            right: cache.logits.shape(),
        });
    }
    Ok(())
}

pub fn backward(
    cache: &ForwardCache<'_>,
    params: &ModelParams,
    op: &Operator,
    grad_out: &DenseMatrix,
    _cfg: &PatchConfig,
) -> Result<Gradients> {
    audit(cache, params, grad_out)?;
    let n = params.hidden_depth();
    let mut weights = vec![DenseMatrix::zeros(0, 0); n + 1];
    let mut biases = vec![DenseVector::zeros(0); n + 1];
    let mut norms = vec![0.0; n];

    // ∂l/∂Y'_{i+1}, the pre-activation produced by W_i.
    let mut g_pre = grad_out.clone();
    // Identity-branch gradient waiting to be added into ∂l/∂Y_i.
    let mut pending_skip: Option<DenseMatrix> = None;
    for i in (0..=n).rev() {
        let propagated = spmm(op.matrix(), &g_pre)?;
        weights[i] = matmul_tn(&cache.dropped_input(i), &propagated)?;
        biases[i] = g_pre.column_sums();
        if i == 0 {
            break;
        }
        let mut d_y = matmul_nt(&propagated, &params.weights[i])?;
        if let Some(mask) = &cache.dropout_masks[i] {
            d_y = d_y.hadamard(mask)?;
        }
        if let Some(d_skip) = pending_skip.take() {
            d_y.add_assign(&d_skip)?;
        }
        // Y_i lives at hidden index i-1.
        let h = i - 1;
        norms[h] = frobenius_norm(&d_y);
        let d_act = match cache.energy_scales[h] {
            Some(s) => d_y.scale(s),
            None => d_y,
        };
        g_pre = d_act.hadamard(&relu_mask(&cache.pre_activations[h]))?;
        if cache.skip_applied[h] {
            pending_skip = Some(d_act);
        }
    }
    Ok(Gradients {
        weights,
        biases,
        activation_grad_norms: norms,
    })
}

/// Largest parameter count [`grad_check`] accepts.
pub const GRAD_CHECK_MAX_PARAMS: usize = 5000;

/// Where one parameter lives in [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
}

fn param_slots(params: &ModelParams) -> Vec<ParamSlot> {
    let mut slots = Vec::with_capacity(params.parameter_count());
    for (layer, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        slots.extend((0..w.rows() * w.cols()).map(|index| ParamSlot::Weight { layer, index }));
        slots.extend((0..b.len()).map(|index| ParamSlot::Bias { layer, index }));
    }
    slots
}

fn slot_value(grads: &Gradients, slot: ParamSlot) -> f64 {
    match slot {
        ParamSlot::Weight { layer, index } => grads.weights[layer].as_slice()[index],
        ParamSlot::Bias { layer, index } => grads.biases[layer].as_slice()[index],
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamSlot>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max relative error between analytic gradients and central differences,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    params: &ModelParams,
    op: &Operator,
    x: &DenseMatrix,
    targets: &DenseMatrix,
    mask: &[usize],
    cfg: &PatchConfig,
    eps: f64,
) -> Result<f64> {
    grad_check_report(params, op, x, targets, mask, cfg, eps, Execution::default())
        .map(|r| r.max_rel_error)
}

/// Like [`grad_check`], reporting the worst parameter. Dropout is off on both
/// sides and energy normalization scales stay frozen at their values for the
/// unperturbed parameters.
///
/// In plain f64 the difference quotient carries about `ulp(loss)/eps ≈ 1e-11`
/// of rounding noise, which swamps the small bottom-layer gradients of deep
/// stacks. The perturbed logits are therefore computed in double-double
/// arithmetic by a separate dense forward pass, and the loss difference is
/// formed from the logit difference `Δ` as
/// `log1p(Σ_j p⁻_j·expm1(Δ_j)) − Δ_label`, which never subtracts two nearly
/// equal losses.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_report(
    params: &ModelParams,
    op: &Operator,
    x: &DenseMatrix,
    targets: &DenseMatrix,
    mask: &[usize],
    cfg: &PatchConfig,
    eps: f64,
    exec: Execution,
) -> Result<GradCheckReport> {
    let count = params.parameter_count();
    if count > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "gradient check is limited to {GRAD_CHECK_MAX_PARAMS} parameters, model has {count}"
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let cfg = PatchConfig { dropout: 0.0, ..cfg.clone() };
    let cache = forward(params, op, x, &cfg, Mode::Eval, 0)?;
    let g = output_gradient(&cache.logits, targets, mask)?;
    let grads = backward(&cache, params, op, &g, &cfg)?;
    let reference = Reference::new(params, op, x, targets, mask, &cfg, &cache.energy_scales);
    let slots = param_slots(params);
    let numeric: Vec<f64> = exec.map_indices(slots.len(), |k| {
        reference.loss_difference(params, slots[k], eps) / (2.0 * eps)
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (slot, num) in slots.into_iter().zip(numeric) {
        let ana = slot_value(&grads, slot);
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report = GradCheckReport {
                max_rel_error: rel,
                worst: Some(slot),
                analytic: ana,
                numeric: num,
            };
        }
    }
    Ok(report)
}

/// Dense double-double evaluation of the eval-mode loss with one parameter
/// optionally shifted.
struct Reference<'a> {
    rows: Vec<Vec<(usize, f64)>>,
    x: &'a DenseMatrix,
    targets: &'a DenseMatrix,
    mask: &'a [usize],
    skip: Vec<bool>,
    scales: Vec<Option<f64>>,
}

impl<'a> Reference<'a> {
    fn new(
        params: &ModelParams,
        op: &Operator,
        x: &'a DenseMatrix,
        targets: &'a DenseMatrix,
        mask: &'a [usize],
        cfg: &PatchConfig,
        scales: &[Option<f64>],
    ) -> Self {
        let a = op.matrix();
        let rows = (0..a.dim())
            .map(|i| {
                let (cols, vals) = a.row(i);
                cols.iter().copied().zip(vals.iter().copied()).collect()
            })
            .collect();
        let widths = params.widths();
        let skip = (0..params.hidden_depth())
            .map(|i| cfg.skip && i >= 1 && widths[i] == widths[i + 1])
            .collect();
        Self {
            rows,
            x,
            targets,
            mask,
            skip,
            scales: scales.to_vec(),
        }
    }

    /// Output logits, row-major `N × C`.
    fn logits(&self, params: &ModelParams, shift: Option<(ParamSlot, f64)>) -> Vec<TwoFloat> {
        let n_nodes = self.x.rows();
        let zero = TwoFloat::from(0.0);
        let mut y: Vec<TwoFloat> = self.x.as_slice().iter().map(|&v| TwoFloat::from(v)).collect();
        let mut width = self.x.cols();
        let last = params.weights.len() - 1;
        for (layer, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let out = w.cols();
            let mut wd: Vec<TwoFloat> = w.as_slice().iter().map(|&v| TwoFloat::from(v)).collect();
            let mut bd: Vec<TwoFloat> = b.as_slice().iter().map(|&v| TwoFloat::from(v)).collect();
            match shift {
                Some((ParamSlot::Weight { layer: l, index }, d)) if l == layer => wd[index] += d,
                Some((ParamSlot::Bias { layer: l, index }, d)) if l == layer => bd[index] += d,
                _ => {}
            }
            let mut t = vec![zero; n_nodes * out];
            for r in 0..n_nodes {
                for k in 0..width {
                    let s = y[r * width + k];
                    for c in 0..out {
                        t[r * out + c] += s * wd[k * out + c];
                    }
                }
            }
            let mut pre = vec![zero; n_nodes * out];
            for (r, row) in self.rows.iter().enumerate() {
                for c in 0..out {
                    let mut acc = bd[c];
                    for &(j, v) in row {
                        acc += t[j * out + c] * v;
                    }
                    pre[r * out + c] = acc;
                }
            }
            if layer == last {
                return pre;
            }
            let mut act: Vec<TwoFloat> = pre.into_iter().map(|v| if v > zero { v } else { zero }).collect();
            if self.skip[layer] {
                for (a, prev) in act.iter_mut().zip(&y) {
                    *a += *prev;
                }
            }
            if let Some(s) = self.scales[layer] {
                for a in act.iter_mut() {
                    *a *= s;
                }
            }
            y = act;
            width = out;
        }
        unreachable!("output layer returns")
    }

    /// Mean loss of the given logits, evaluated in f64.
    #[cfg(test)]
    fn loss_of(&self, logits: &[TwoFloat]) -> f64 {
        let c = self.targets.cols();
        let rows: Vec<f64> = self
            .mask
            .iter()
            .flat_map(|&i| logits[i * c..(i + 1) * c].iter().map(|v| v.hi()))
            .collect();
        let picked = DenseMatrix::from_vec(self.mask.len(), c, rows).expect("mask rows");
        let logp = crate::linalg::log_softmax_rows(&picked);
        let mut total = 0.0;
        for (k, &i) in self.mask.iter().enumerate() {
            for (z, lp) in self.targets.row(i).iter().zip(logp.row(k)) {
                total -= z * lp;
            }
        }
        total / self.mask.len() as f64
    }

    /// `loss(θ + eps·e_slot) − loss(θ − eps·e_slot)`.
    fn loss_difference(&self, params: &ModelParams, slot: ParamSlot, eps: f64) -> f64 {
        let c = self.targets.cols();
        let up = self.logits(params, Some((slot, eps)));
        let down = self.logits(params, Some((slot, -eps)));
        let mut total = 0.0;
        for &i in self.mask {
            let (a_up, a_down) = (&up[i * c..(i + 1) * c], &down[i * c..(i + 1) * c]);
            let base: Vec<f64> = a_down.iter().map(|v| v.hi()).collect();
            let max = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = base.iter().map(|v| (v - max).exp()).collect();
            let norm: f64 = weights.iter().sum();
            let mut u = 0.0;
            let mut label_shift = 0.0;
            for j in 0..c {
                let delta = (a_up[j] - a_down[j]).hi();
                u += weights[j] / norm * delta.exp_m1();
                label_shift += self.targets.get(i, j) * delta;
            }
            total += u.ln_1p() - label_shift;
        }
        total / self.mask.len() as f64
    }
}
