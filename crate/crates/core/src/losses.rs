//! Entropy-based clustering losses and their gradients with respect to logits.
//!
//! Every loss is evaluated on a batch: an `M × K` matrix of predictions `σ` (rows are
//! softmax outputs) and, for the self-labeling losses, an aligned matrix of pseudo-labels `y`.
//! Batch means `σ̄ = mean_i σ_i` and `ȳ` enter the fairness terms.
//!
//! | kind       | decisiveness / consistency        | fairness            | regularizer      |
//! |------------|-----------------------------------|---------------------|------------------|
//! | `mi`       | mean `H(σ)`                       | `−H(σ̄)`             | none             |
//! | `mi_decay` | mean `H(σ)`                       | `λ KL(σ̄‖u)`         | `γ ‖[v, w]‖²`    |
//! | `mi_mm`    | mean `H(σ)`                       | `KL(σ̄‖u)`           | `γ ‖v‖²`         |
//! | `mi_pp`    | mean `H(σ)`                       | `λ KL(u‖σ̄)`         | `γ ‖v‖²`         |
//! | `ours`     | mean `(1−β)H(σ) + β H(σ, y)`      | `λ KL(u‖ȳ)`         | `γ ‖v‖²`         |
//! | `mi_adm`   | mean `H(y, σ)`                    | `λ KL(ȳ‖u)`         | none             |
//!
//! Reported values keep `+∞` when a log of zero is required. Gradients replace `ln x` by
//! `ln max(x, ε)` with `ε = log_floor`; with `ε = 0` an infinite term is an error instead.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::model::{GradientBuffer, SoftmaxModel};
use crate::simplex::{cross_entropy_of, entropy_of, kl_of, mean_row, stack_rows, ProbVector};
use crate::{Error, Result};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mi,
    MiDecay,
    MiMm,
    MiPp,
    Ours,
    MiAdm,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Mi,
        LossKind::MiDecay,
        LossKind::MiMm,
        LossKind::MiPp,
        LossKind::Ours,
        LossKind::MiAdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mi => "mi",
            LossKind::MiDecay => "mi_decay",
            LossKind::MiMm => "mi_mm",
            LossKind::MiPp => "mi_pp",
            LossKind::Ours => "ours",
            LossKind::MiAdm => "mi_adm",
        }
    }

    /// Whether the loss is defined in terms of auxiliary pseudo-labels `y`.
    pub fn uses_pseudo_labels(self) -> bool {
        matches!(self, LossKind::Ours | LossKind::MiAdm)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Fairness weight `λ`.
    pub lambda: f64,
    /// Margin (weight-norm) coefficient `γ`.
    pub gamma: f64,
    /// Weight `β` on the cross-entropy part of the `ours` loss.
    pub beta: f64,
    /// Fairness target `u`.
    pub prior: ProbVector,
    /// `ε` used inside logarithms when computing gradients.
    pub log_floor: f64,
}

impl LossConfig {
    /// Defaults for `kind` with a uniform prior over `k` classes: `λ = 100` for `ours`,
    /// `λ = 1.3` for `mi_decay`, `λ = 1` otherwise; `γ = 0.01` wherever a norm term exists.
    pub fn new(kind: LossKind, k: usize) -> Self {
        let lambda = match kind {
            LossKind::Ours => 100.0,
            LossKind::MiDecay => 1.3,
            _ => 1.0,
        };
        let gamma = match kind {
            LossKind::Mi | LossKind::MiAdm => 0.0,
            _ => 0.01,
        };
        LossConfig {
            kind,
            lambda,
            gamma,
            beta: 1.0,
            prior: ProbVector::uniform(k),
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.log_floor >= 0.0 && self.log_floor < 1.0) {
            return Err(Error::invalid(format!(
                "log floor must lie in [0, 1), got {}",
                self.log_floor
            )));
        }
        if self.prior.len() < 2 {
            return Err(Error::invalid("prior needs at least two classes"));
        }
        Ok(())
    }

    fn weight_norm(&self, model: &SoftmaxModel) -> f64 {
        match self.kind {
            LossKind::Mi | LossKind::MiAdm => 0.0,
            LossKind::MiDecay => model.weight_norm_sq(),
            _ => model.classifier_norm_sq(),
        }
    }
}

/// Per-term values of a loss. Unused terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean prediction entropy (weighted by `1 − β` for the `ours` family).
    pub decisiveness: f64,
    pub fairness: f64,
    pub regularizer: f64,
    /// Mean cross-entropy between predictions and pseudo-labels.
    pub consistency: f64,
    /// Mean cross-entropy on seeded (labelled) examples.
    pub supervised: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(decisiveness: f64, fairness: f64, regularizer: f64, consistency: f64) -> Self {
        LossBreakdown {
            decisiveness,
            fairness,
            regularizer,
            consistency,
            supervised: 0.0,
            total: decisiveness + fairness + regularizer + consistency,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn check_inputs(
    probs: ArrayView2<'_, f64>,
    pseudo: Option<ArrayView2<'_, f64>>,
    cfg: &LossConfig,
) -> Result<()> {
    if probs.nrows() == 0 {
        return Err(Error::Empty("predictions"));
    }
    if probs.ncols() != cfg.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_classes(),
            found: probs.ncols(),
        });
    }
    if let Some(y) = pseudo {
        if y.dim() != probs.dim() {
            return Err(Error::invalid(format!(
                "pseudo-labels have shape {:?}, predictions {:?}",
                y.dim(),
                probs.dim()
            )));
        }
    }
    Ok(())
}

fn require_pseudo<'a>(
    pseudo: Option<ArrayView2<'a, f64>>,
    kind: LossKind,
) -> Result<ArrayView2<'a, f64>> {
    pseudo.ok_or_else(|| Error::invalid(format!("loss '{kind}' needs pseudo-labels")))
}

fn mean_entropy(probs: ArrayView2<'_, f64>) -> f64 {
    let m = probs.nrows() as f64;
    probs
        .axis_iter(Axis(0))
        .map(|row| entropy_of(&row.to_vec()))
        .sum::<f64>()
        / m
}

/// Mean over rows of `H(p_i, q_i) = −Σ_k p_ik ln q_ik`.
fn mean_cross_entropy(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> f64 {
    let m = p.nrows() as f64;
    let mut acc = 0.0;
    for (pr, qr) in p.axis_iter(Axis(0)).zip(q.axis_iter(Axis(0))) {
        let ce = cross_entropy_of(&pr.to_vec(), &qr.to_vec());
        if ce.is_infinite() {
            return f64::INFINITY;
        }
        acc += ce;
    }
    acc / m
}

/// Evaluates the loss selected by `cfg.kind` on a batch. `model` supplies the norm term and may
/// be omitted, in which case the regularizer is reported as zero.
pub fn evaluate(
    probs: ArrayView2<'_, f64>,
    pseudo: Option<ArrayView2<'_, f64>>,
    model: Option<&SoftmaxModel>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    check_inputs(probs, pseudo, cfg)?;
    let u = cfg.prior.as_slice();
    let reg = model.map(|m| cfg.gamma * cfg.weight_norm(m)).unwrap_or(0.0);
    let breakdown = match cfg.kind {
        LossKind::Mi => {
            let sigma_bar = mean_row(probs);
            LossBreakdown::from_terms(mean_entropy(probs), -entropy_of(&sigma_bar), 0.0, 0.0)
        }
        LossKind::MiDecay => {
            let sigma_bar = mean_row(probs);
            let fair = weighted(cfg.lambda, kl_of(&sigma_bar, u));
            LossBreakdown::from_terms(mean_entropy(probs), fair, reg, 0.0)
        }
        LossKind::MiMm => {
            let sigma_bar = mean_row(probs);
            LossBreakdown::from_terms(mean_entropy(probs), kl_of(&sigma_bar, u), reg, 0.0)
        }
        LossKind::MiPp => {
            let sigma_bar = mean_row(probs);
            let fair = weighted(cfg.lambda, kl_of(u, &sigma_bar));
            LossBreakdown::from_terms(mean_entropy(probs), fair, reg, 0.0)
        }
        LossKind::Ours => {
            let y = require_pseudo(pseudo, cfg.kind)?;
            let y_bar = mean_row(y);
            let fair = weighted(cfg.lambda, kl_of(u, &y_bar));
            let consistency = weighted(cfg.beta, mean_cross_entropy(probs, y));
            let decisiveness = if cfg.beta == 1.0 {
                0.0
            } else {
                (1.0 - cfg.beta) * mean_entropy(probs)
            };
            LossBreakdown::from_terms(decisiveness, fair, reg, consistency)
        }
        LossKind::MiAdm => {
            let y = require_pseudo(pseudo, cfg.kind)?;
            let y_bar = mean_row(y);
            let fair = weighted(cfg.lambda, kl_of(&y_bar, u));
            LossBreakdown::from_terms(0.0, fair, 0.0, mean_cross_entropy(y, probs))
        }
    };
    Ok(breakdown)
}

/// `w · value` with `0 · ∞ = 0`, so a disabled term never poisons the total.
fn weighted(w: f64, value: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * value
    }
}

fn floored_ln(x: f64, floor: f64, what: &str) -> Result<f64> {
    let clamped = x.max(floor);
    if clamped > 0.0 {
        Ok(clamped.ln())
    } else {
        Err(Error::InfiniteLoss(format!("{what} has a zero component")))
    }
}

/// Adds `σ_j (c_j − Σ_k σ_k c_k)` to `grad`: the pull-back of `∂/∂σ = c` through softmax.
fn add_softmax_pullback(grad: &mut [f64], sigma: &[f64], c: &[f64]) {
    let dot: f64 = sigma.iter().zip(c).map(|(s, c)| s * c).sum();
    for ((g, &s), &ck) in grad.iter_mut().zip(sigma).zip(c) {
        *g += s * (ck - dot);
    }
}

/// `∂H(σ)/∂logits = −σ_j (ln σ_j + H(σ))`, scaled by `scale`.
fn add_entropy_grad(grad: &mut [f64], sigma: &[f64], scale: f64) {
    let h = entropy_of(sigma);
    for (g, &s) in grad.iter_mut().zip(sigma) {
        if s > 0.0 {
            *g -= scale * s * (s.ln() + h);
        }
    }
}

/// Gradient of the data terms of the loss (everything except the weight-norm regularizer)
/// with respect to the logits of each example. Row `i` is `∂loss/∂l_i` including the `1/M`
/// of the batch mean and the batch-level fairness contribution.
pub fn logit_gradients(
    probs: ArrayView2<'_, f64>,
    pseudo: Option<ArrayView2<'_, f64>>,
    cfg: &LossConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_inputs(probs, pseudo, cfg)?;
    let (m, k) = probs.dim();
    let inv_m = 1.0 / m as f64;
    let u = cfg.prior.as_slice();
    let eps = cfg.log_floor;
    let mut grad = Array2::<f64>::zeros((m, k));

    // Per-class constants c_k = ∂fairness/∂σ̄_k / M for the σ̄-based fairness terms.
    let fairness_c: Option<Vec<f64>> = match cfg.kind {
        LossKind::Mi => {
            let sigma_bar = mean_row(probs);
            // −H(σ̄) has ∂/∂σ̄_k = ln σ̄_k + 1; the constant drops out of the pull-back.
            Some(
                sigma_bar
                    .iter()
                    .map(|&s| floored_ln(s, eps, "mean prediction").map(|l| l * inv_m))
                    .collect::<Result<_>>()?,
            )
        }
        LossKind::MiDecay | LossKind::MiMm => {
            let w = if cfg.kind == LossKind::MiDecay {
                cfg.lambda
            } else {
                1.0
            };
            let sigma_bar = mean_row(probs);
            Some(
                sigma_bar
                    .iter()
                    .zip(u)
                    .map(|(&s, &uk)| {
                        Ok(w * (floored_ln(s, eps, "mean prediction")? - uk.ln()) * inv_m)
                    })
                    .collect::<Result<_>>()?,
            )
        }
        LossKind::MiPp => {
            let sigma_bar = mean_row(probs);
            Some(
                sigma_bar
                    .iter()
                    .zip(u)
                    .map(|(&s, &uk)| {
                        let floored = s.max(eps);
                        if uk > 0.0 && floored <= 0.0 {
                            return Err(Error::InfiniteLoss(
                                "mean prediction has a zero component under strong fairness".into(),
                            ));
                        }
                        Ok(if uk > 0.0 {
                            -cfg.lambda * uk / floored * inv_m
                        } else {
                            0.0
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        }
        LossKind::Ours | LossKind::MiAdm => None,
    };

    for i in 0..m {
        let sigma = probs.row(i).to_vec();
        let mut g = vec![0.0; k];
        match cfg.kind {
            LossKind::Mi | LossKind::MiDecay | LossKind::MiMm | LossKind::MiPp => {
                add_entropy_grad(&mut g, &sigma, inv_m);
            }
            LossKind::Ours => {
                let y = require_pseudo(pseudo, cfg.kind)?.row(i).to_vec();
                let a: Vec<f64> = y
                    .iter()
                    .map(|&yk| floored_ln(yk, eps, "pseudo-label").map(|l| -cfg.beta * l * inv_m))
                    .collect::<Result<_>>()?;
                add_softmax_pullback(&mut g, &sigma, &a);
                if cfg.beta != 1.0 {
                    add_entropy_grad(&mut g, &sigma, (1.0 - cfg.beta) * inv_m);
                }
            }
            LossKind::MiAdm => {
                let y = require_pseudo(pseudo, cfg.kind)?.row(i).to_vec();
                let y_mass: f64 = y.iter().sum();
                for ((gk, &s), &yk) in g.iter_mut().zip(&sigma).zip(y.iter()) {
                    *gk += (y_mass * s - yk) * inv_m;
                }
            }
        }
        if let Some(c) = &fairness_c {
            add_softmax_pullback(&mut g, &sigma, c);
        }
        grad.row_mut(i)
            .iter_mut()
            .zip(&g)
            .for_each(|(o, v)| *o = *v);
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logit gradient".into()));
    }
    Ok(grad)
}

/// Adds the gradient of the weight-norm regularizer of `cfg.kind` to `grads`.
pub fn add_regularizer_gradient(
    grads: &mut GradientBuffer,
    model: &SoftmaxModel,
    cfg: &LossConfig,
) {
    match cfg.kind {
        LossKind::Mi | LossKind::MiAdm => {}
        LossKind::MiDecay => grads.add_weight_decay(model, cfg.gamma),
        _ => grads.add_classifier_decay(model, cfg.gamma),
    }
}

/// Exact `∂loss/∂logits` for a single example treated as a batch of one.
pub fn grad_wrt_logits(
    sigma: &ProbVector,
    pseudo: Option<&ProbVector>,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let probs = stack_rows(std::slice::from_ref(sigma))?;
    let y = pseudo
        .map(|p| stack_rows(std::slice::from_ref(p)))
        .transpose()?;
    let g = logit_gradients(probs.view(), y.as_ref().map(|a| a.view()), cfg)?;
    Ok(g.row(0).to_vec())
}

fn eval_lists(
    preds: &[ProbVector],
    pseudo: Option<&[ProbVector]>,
    model: Option<&SoftmaxModel>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let probs = stack_rows(preds)?;
    let y = pseudo.map(stack_rows).transpose()?;
    evaluate(probs.view(), y.as_ref().map(|a| a.view()), model, cfg)
}

fn with_kind(cfg: &LossConfig, kind: LossKind) -> LossConfig {
    LossConfig {
        kind,
        ..cfg.clone()
    }
}

/// Mean prediction entropy minus the entropy of the mean prediction.
pub fn loss_mi(preds: &[ProbVector]) -> Result<LossBreakdown> {
    let k = preds.first().ok_or(Error::Empty("predictions"))?.len();
    eval_lists(preds, None, None, &LossConfig::new(LossKind::Mi, k))
}

pub fn loss_mi_decay(
    preds: &[ProbVector],
    model: &SoftmaxModel,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eval_lists(preds, None, Some(model), &with_kind(cfg, LossKind::MiDecay))
}

pub fn loss_mi_mm(
    preds: &[ProbVector],
    model: &SoftmaxModel,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eval_lists(preds, None, Some(model), &with_kind(cfg, LossKind::MiMm))
}

pub fn loss_mi_pp(
    preds: &[ProbVector],
    model: &SoftmaxModel,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eval_lists(preds, None, Some(model), &with_kind(cfg, LossKind::MiPp))
}

/// The self-labeling loss with `β = 1`, whatever `cfg.beta` says.
pub fn loss_ours(
    preds: &[ProbVector],
    pseudo: &[ProbVector],
    model: &SoftmaxModel,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let cfg = LossConfig {
        beta: 1.0,
        ..with_kind(cfg, LossKind::Ours)
    };
    eval_lists(preds, Some(pseudo), Some(model), &cfg)
}

pub fn loss_ours_beta(
    preds: &[ProbVector],
    pseudo: &[ProbVector],
    model: &SoftmaxModel,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eval_lists(
        preds,
        Some(pseudo),
        Some(model),
        &with_kind(cfg, LossKind::Ours),
    )
}

pub fn loss_mi_adm(
    preds: &[ProbVector],
    pseudo: &[ProbVector],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eval_lists(preds, Some(pseudo), None, &with_kind(cfg, LossKind::MiAdm))
}

/// Adds the mean cross-entropy `H(onehot(label), σ_i)` over examples that carry a label.
pub fn seeded_loss(
    preds: &[ProbVector],
    seed_labels: &[Option<usize>],
    base: LossBreakdown,
) -> Result<LossBreakdown> {
    let probs = stack_rows(preds)?;
    seeded_loss_batch(probs.view(), seed_labels, base)
}

pub fn seeded_loss_batch(
    probs: ArrayView2<'_, f64>,
    seed_labels: &[Option<usize>],
    base: LossBreakdown,
) -> Result<LossBreakdown> {
    check_seed_labels(probs, seed_labels)?;
    let mut count = 0usize;
    let mut acc = 0.0;
    for (row, label) in probs.axis_iter(Axis(0)).zip(seed_labels) {
        if let Some(c) = *label {
            count += 1;
            let p = row[c];
            acc += if p > 0.0 { -p.ln() } else { f64::INFINITY };
        }
    }
    if count == 0 {
        return Ok(base);
    }
    let term = acc / count as f64;
    Ok(LossBreakdown {
        supervised: base.supervised + term,
        total: base.total + term,
        ..base
    })
}

/// Adds `(σ_i − onehot)/|seeded|` to the rows of `grad` that carry a label.
pub fn add_seeded_gradients(
    grad: &mut Array2<f64>,
    probs: ArrayView2<'_, f64>,
    seed_labels: &[Option<usize>],
) -> Result<()> {
    check_seed_labels(probs, seed_labels)?;
    let count = seed_labels.iter().filter(|l| l.is_some()).count();
    if count == 0 {
        return Ok(());
    }
    let inv = 1.0 / count as f64;
    for (i, label) in seed_labels.iter().enumerate() {
        if let Some(c) = *label {
            for k in 0..probs.ncols() {
                let target = if k == c { 1.0 } else { 0.0 };
                grad[[i, k]] += (probs[[i, k]] - target) * inv;
            }
        }
    }
    Ok(())
}

fn check_seed_labels(probs: ArrayView2<'_, f64>, seed_labels: &[Option<usize>]) -> Result<()> {
    if seed_labels.len() != probs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: probs.nrows(),
            found: seed_labels.len(),
        });
    }
    let k = probs.ncols();
    if let Some(bad) = seed_labels.iter().flatten().find(|&&c| c >= k) {
        return Err(Error::invalid(format!(
            "seed label {bad} out of range for K={k}"
        )));
    }
    Ok(())
}
