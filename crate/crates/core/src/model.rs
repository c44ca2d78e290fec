//! Deep GCN forward pass with composable patches.
//!
//! Layer `i` maps `Y_i` to `Y_{i+1}`:
//!
//! ```text
//! Y'_{i+1} = Op · (drop(Y_i) · W_i) + 1·b_iᵀ
//! Y_{i+1}  = ReLU(Y'_{i+1})                 (+ Y_i with skip, hidden→hidden only)
//! Y_{i+1} ← λ_E · Y_{i+1} / ‖Y_{i+1}‖_F     (energy normalization)
//! ```
//!
//! and the output layer applies `softmax(Op · drop(Y_n) · W_n + 1·b_nᵀ)`.
//! `Op` is `Â`, or `Â_r` when a resolution is set.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::graph_ops::Operator;
use crate::linalg::{
    frobenius_norm, log_softmax_rows, matmul, relu, softmax_rows, spmm, DenseMatrix, DenseVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    Uniform,
    Normal,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Uniform => "uniform",
            InitScheme::Normal => "normal",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(InitScheme::Uniform),
            "normal" => Ok(InitScheme::Normal),
            other => Err(Error::InvalidConfig(format!("unknown init scheme {other:?}"))),
        }
    }
}

/// Enabled patches and their constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    /// Spectral shift `r` of the propagation operator.
    pub resolution: Option<f64>,
    pub skip: bool,
    /// Target spectral norm `λ_W` of every weight matrix.
    pub weight_norm: Option<f64>,
    /// Apply weight normalization at initialization only, not after each step.
    pub weight_norm_init_only: bool,
    /// Target Frobenius norm `λ_E` of every hidden activation.
    pub energy_norm: Option<f64>,
    pub init_scheme: InitScheme,
    /// `λ_init`, multiplies the initialization scale.
    pub init_const: f64,
    pub dropout: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            resolution: None,
            skip: false,
            weight_norm: None,
            weight_norm_init_only: false,
            energy_norm: None,
            init_scheme: InitScheme::Uniform,
            init_const: 1.0,
            dropout: 0.0,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if let Some(r) = self.resolution {
            if !r.is_finite() {
                return bad(format!("resolution must be finite, got {r}"));
            }
        }
        if let Some(w) = self.weight_norm {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("weight norm constant must be positive, got {w}"));
            }
        }
        if let Some(e) = self.energy_norm {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("energy norm constant must be positive, got {e}"));
            }
        }
        if !(self.init_const > 0.0 && self.init_const.is_finite()) {
            return bad(format!("init constant must be positive, got {}", self.init_const));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Weights `W_0 … W_n` and biases `b_0 … b_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseVector>,
}

impl ModelParams {
    /// `[F_0, F_1, …, F_n, C]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(|m| m.rows()).collect();
        w.extend(self.weights.last().map(|m| m.cols()));
        w
    }

    /// Total number of layers (`n + 1`).
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Number of hidden activations `Y_1 … Y_n`.
    pub fn hidden_depth(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::InvalidConfig(format!(
                "{} weight matrices but {} bias vectors",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if b.len() != w.cols() {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: weight {:?} but bias length {}",
                    w.shape(),
                    b.len()
                )));
            }
            if i > 0 && self.weights[i - 1].cols() != w.rows() {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: weight {:?} does not chain after {:?}",
                    w.shape(),
                    self.weights[i - 1].shape()
                )));
            }
        }
        Ok(())
    }
}

/// Draws weights per the configured scheme; biases start at zero.
///
/// Uniform: `λ_init · U(−1/√F_{i+1}, 1/√F_{i+1})`.
/// Normal: `λ_init · N(0, σ²)` with `σ = √(2/(F_i + F_{i+1}))`.
pub fn init_params(widths: &[usize], cfg: &PatchConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "widths need at least two positive entries, got {widths:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(widths.len() - 1);
    let mut biases = Vec::with_capacity(widths.len() - 1);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let data: Vec<f64> = match cfg.init_scheme {
            InitScheme::Uniform => {
                let bound = 1.0 / (fan_out as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..fan_in * fan_out)
                    .map(|_| cfg.init_const * dist.sample(&mut rng))
                    .collect()
            }
            InitScheme::Normal => {
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..fan_in * fan_out)
                    .map(|_| cfg.init_const * dist.sample(&mut rng))
                    .collect()
            }
        };
        weights.push(DenseMatrix::from_vec(fan_in, fan_out, data)?);
        biases.push(DenseVector::zeros(fan_out));
    }
    Ok(ModelParams { weights, biases })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one forward pass, as needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<'x> {
    /// `Y_0 = X`.
    pub input: &'x DenseMatrix,
    /// Post-patch hidden activations `Y_1 … Y_n`.
    pub hidden: Vec<DenseMatrix>,
    /// Pre-activations `Y'_1 … Y'_n`.
    pub pre_activations: Vec<DenseMatrix>,
    /// Output logits `Y'`.
    pub logits: DenseMatrix,
    /// `Y = softmax(Y')`.
    pub probs: DenseMatrix,
    /// Inverted-dropout multipliers applied to each layer input `Y_0 … Y_n`.
    pub dropout_masks: Vec<Option<DenseMatrix>>,
    /// Energy normalization factor applied to each `Y_1 … Y_n`.
    pub energy_scales: Vec<Option<f64>>,
    /// Layers whose activation was all zero when energy normalization was due.
    pub zero_activation: Vec<bool>,
    /// Whether each hidden layer carried a skip connection.
    pub skip_applied: Vec<bool>,
}

impl ForwardCache<'_> {
    /// `Y_i` for `i` in `0..=n`.
    pub fn layer_input(&self, i: usize) -> &DenseMatrix {
        if i == 0 {
            self.input
        } else {
            &self.hidden[i - 1]
        }
    }

    /// The matrix actually multiplied by `W_i` (dropout applied).
    pub fn dropped_input(&self, i: usize) -> Cow<'_, DenseMatrix> {
        match &self.dropout_masks[i] {
            Some(mask) => Cow::Owned(self.layer_input(i).hadamard(mask).expect("mask shape")),
            None => Cow::Borrowed(self.layer_input(i)),
        }
    }
}

pub fn forward<'x>(
    params: &ModelParams,
    op: &Operator,
    x: &'x DenseMatrix,
    cfg: &PatchConfig,
    mode: Mode,
    seed: u64,
) -> Result<ForwardCache<'x>> {
    forward_impl(params, op, x, cfg, mode, seed, None)
}

/// Eval-mode forward pass that uses the given energy normalization factors
/// instead of recomputing them. Used to check gradients under the
/// stop-gradient convention for the normalization constant.
pub fn forward_with_frozen_scales<'x>(
    params: &ModelParams,
    op: &Operator,
    x: &'x DenseMatrix,
    cfg: &PatchConfig,
    scales: &[Option<f64>],
) -> Result<ForwardCache<'x>> {
    forward_impl(params, op, x, cfg, Mode::Eval, 0, Some(scales))
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let keep = 1.0 / (1.0 - p);
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// `Op · (input · W) + 1·bᵀ`.
fn propagate(
    op: &Operator,
    input: &DenseMatrix,
    w: &DenseMatrix,
    b: &DenseVector,
) -> Result<DenseMatrix> {
    let mut out = spmm(op.matrix(), &matmul(input, w)?)?;
    out.add_row_vector(b)?;
    Ok(out)
}

fn forward_impl<'x>(
    params: &ModelParams,
    op: &Operator,
    x: &'x DenseMatrix,
    cfg: &PatchConfig,
    mode: Mode,
    seed: u64,
    frozen: Option<&[Option<f64>]>,
) -> Result<ForwardCache<'x>> {
    params.validate()?;
    let widths = params.widths();
    if x.rows() != op.dim() || x.cols() != widths[0] {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: x.shape(),
            right: (op.dim(), widths[0]),
        });
    }
    let n = params.hidden_depth();
    if let Some(s) = frozen {
        if s.len() != n {
            return Err(Error::CacheMismatch(format!(
                "{} frozen scales for {n} hidden layers",
                s.len()
            )));
        }
    }
    let use_dropout = mode == Mode::Train && cfg.dropout > 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut hidden: Vec<DenseMatrix> = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    let mut dropout_masks = Vec::with_capacity(n + 1);
    let mut energy_scales = Vec::with_capacity(n);
    let mut zero_activation = Vec::with_capacity(n);
    let mut skip_applied = Vec::with_capacity(n);

    for i in 0..=n {
        let current = if i == 0 { x } else { &hidden[i - 1] };
        let mask = use_dropout.then(|| dropout_mask(current.rows(), current.cols(), cfg.dropout, &mut rng));
        let pre = match &mask {
            Some(m) => propagate(op, &current.hadamard(m)?, &params.weights[i], &params.biases[i])?,
            None => propagate(op, current, &params.weights[i], &params.biases[i])?,
        };
        dropout_masks.push(mask);
        if i == n {
            let probs = softmax_rows(&pre);
            return Ok(ForwardCache {
                input: x,
                hidden,
                pre_activations,
                logits: pre,
                probs,
                dropout_masks,
                energy_scales,
                zero_activation,
                skip_applied,
            });
        }

        let mut act = relu(&pre);
        let skip = cfg.skip && i >= 1 && current.shape() == act.shape();
        if skip {
            act.add_assign(current)?;
        }
        let mut scale = None;
        let mut zero = false;
        if let Some(lambda) = cfg.energy_norm {
            let s = match frozen {
                Some(f) => f[i],
                None => {
                    let norm = frobenius_norm(&act);
                    (norm > 0.0).then(|| lambda / norm)
                }
            };
            match s {
                Some(s) => act.scale_in_place(s),
                None => zero = true,
            }
            scale = s;
        }
        pre_activations.push(pre);
        hidden.push(act);
        energy_scales.push(scale);
        zero_activation.push(zero);
        skip_applied.push(skip);
    }
    unreachable!("output layer returns")
}

/// Mean over masked rows of `−Σ_j Z_ij log softmax(Y')_ij`, computed from
/// logits through a stabilized log-softmax.
pub fn nll_loss(logits: &DenseMatrix, targets: &DenseMatrix, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "nll_loss",
            left: logits.shape(),
            right: targets.shape(),
        });
    }
    let rows: Vec<f64> = mask.iter().flat_map(|&i| logits.row(i).to_vec()).collect();
    let picked = DenseMatrix::from_vec(mask.len(), logits.cols(), rows)?;
    let logp = log_softmax_rows(&picked);
    let mut total = 0.0;
    for (k, &i) in mask.iter().enumerate() {
        for (z, lp) in targets.row(i).iter().zip(logp.row(k)) {
            if *z != 0.0 {
                total -= z * lp;
            }
        }
    }
    Ok(total / mask.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(scores: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let correct = mask
        .iter()
        .filter(|&&i| argmax(scores.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / mask.len() as f64)
}
