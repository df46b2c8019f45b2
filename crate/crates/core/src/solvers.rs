//! Solvers for the convex pseudo-label subproblem
//!
//! ```text
//! E(y) = −(β/M) Σ_i Σ_k σ_ik ln y_ik − λ Σ_k u_k ln(Σ_i y_ik / M),   y_i ∈ Δ^K
//! ```
//!
//! * [`solve_em`]: bound optimization. The E-step normalizes each column of `y` into a
//!   distribution `S^k` over points, which makes the Jensen bound on the log-of-sums term tight;
//!   the M-step minimizes the bound in closed form,
//!   `y_ik = (σ_ik + λ' u_k S_ik) / (1 + λ' Σ_c u_c S_ic)` with `λ' = λM/β`.
//! * [`solve_newton`]: damped Newton on the row simplexes, solving the KKT system by
//!   eliminating the per-row multipliers and the rank-`K` coupling of the log-of-sums term.
//! * [`solve_mirror_descent`]: entropic mirror descent with step backtracking, for either this
//!   objective or the y-part of the MI-ADM loss.
//!
//! `M` is `EmConfig::scale_m` when set (the batch size in batch mode), otherwise the row count.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::simplex::{check_rows_on_simplex, ClusterSupport, ProbVector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub lambda: f64,
    pub beta: f64,
    pub prior: ProbVector,
    /// Stop once the max-abs change of `y` in one iteration falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// `M` in the objective and M-step; defaults to the number of rows.
    pub scale_m: Option<usize>,
    /// Record the objective after every iteration.
    pub record_trace: bool,
}

impl EmConfig {
    /// `λ = 1`, `β = 1`, uniform prior, tolerance `1e-5`, at most 100 iterations.
    pub fn new(k: usize) -> Self {
        EmConfig {
            lambda: 1.0,
            beta: 1.0,
            prior: ProbVector::uniform(k),
            tolerance: 1e-5,
            max_iterations: 100,
            scale_m: None,
            record_trace: true,
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
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if self.scale_m == Some(0) {
            return Err(Error::invalid("scale_m must be >= 1"));
        }
        Ok(())
    }

    fn effective_m(&self, rows: usize) -> f64 {
        self.scale_m.unwrap_or(rows) as f64
    }
}

/// Pseudo-labels `y` (`M × K`), the cluster support of the last E-step, and solver diagnostics.
#[derive(Clone, Debug)]
pub struct PseudoLabelState {
    pub y: Array2<f64>,
    pub support: ClusterSupport,
    pub iterations: usize,
    /// Objective at the start and after every iteration (empty when tracing is off).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Newton iterations that fell back to a gradient step.
    pub fallback_steps: usize,
}

fn check_sigma(sigma: ArrayView2<'_, f64>, cfg: &EmConfig) -> Result<()> {
    cfg.validate()?;
    if sigma.ncols() != cfg.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_classes(),
            found: sigma.ncols(),
        });
    }
    check_rows_on_simplex(sigma, "predictions")
}

fn check_same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn column_sums(y: ArrayView2<'_, f64>) -> Vec<f64> {
    y.sum_axis(Axis(0)).to_vec()
}

/// `E(y)`; `+∞` when a required log has a zero argument.
pub fn em_objective(
    y: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
) -> Result<f64> {
    check_same_shape(y, sigma)?;
    if y.ncols() != cfg.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_classes(),
            found: y.ncols(),
        });
    }
    Ok(objective_unchecked(y, sigma, cfg))
}

fn objective_unchecked(y: ArrayView2<'_, f64>, sigma: ArrayView2<'_, f64>, cfg: &EmConfig) -> f64 {
    let m = cfg.effective_m(y.nrows());
    let mut data = 0.0;
    for (&s, &v) in sigma.iter().zip(y.iter()) {
        if s > 0.0 {
            if v <= 0.0 {
                return f64::INFINITY;
            }
            data -= s * v.ln();
        }
    }
    let mut fair = 0.0;
    if cfg.lambda > 0.0 {
        for (&uk, sk) in cfg.prior.as_slice().iter().zip(column_sums(y)) {
            if uk > 0.0 {
                if sk <= 0.0 {
                    return f64::INFINITY;
                }
                fair -= uk * (sk / m).ln();
            }
        }
    }
    cfg.beta / m * data + cfg.lambda * fair
}

/// Upper bound on `E(y)` obtained by applying Jensen's inequality to each log-of-sums term with
/// weights `S^k`: `−(β/M) Σ σ ln y − λ Σ_k u_k Σ_i S_ik ln(y_ik / (M S_ik))`.
pub fn jensen_bound(
    y: ArrayView2<'_, f64>,
    support: &ClusterSupport,
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
) -> Result<f64> {
    check_same_shape(y, sigma)?;
    if support.num_clusters() != y.ncols() || support.num_points() != y.nrows() {
        return Err(Error::invalid(
            "cluster support does not match pseudo-label shape",
        ));
    }
    let m = cfg.effective_m(y.nrows());
    let lambda_zero = cfg.lambda == 0.0;
    let data_cfg = EmConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let data = objective_unchecked(y, sigma, &data_cfg);
    if lambda_zero {
        return Ok(data);
    }
    let mut fair = 0.0;
    for (k, &uk) in cfg.prior.as_slice().iter().enumerate() {
        if uk == 0.0 {
            continue;
        }
        for i in 0..y.nrows() {
            let s = support.get(k, i);
            if s > 0.0 {
                let v = y[[i, k]];
                if v <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                fair -= uk * s * (v / (m * s)).ln();
            }
        }
    }
    Ok(data + cfg.lambda * fair)
}

/// Normalizes each column of `y` into a distribution over points.
pub fn e_step(y: ArrayView2<'_, f64>) -> Result<ClusterSupport> {
    let sums = column_sums(y);
    if let Some(k) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateCluster { cluster: k });
    }
    let mut support = y.t().to_owned();
    for (mut row, s) in support.axis_iter_mut(Axis(0)).zip(&sums) {
        row.mapv_inplace(|v| v / s);
    }
    Ok(ClusterSupport::from_matrix_unchecked(support))
}

/// Closed-form minimizer of the bound for fixed `S`.
pub fn m_step(
    sigma: ArrayView2<'_, f64>,
    support: &ClusterSupport,
    cfg: &EmConfig,
) -> Result<Array2<f64>> {
    let (rows, k) = sigma.dim();
    if support.num_clusters() != k || support.num_points() != rows {
        return Err(Error::invalid(
            "cluster support does not match prediction shape",
        ));
    }
    if k != cfg.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_classes(),
            found: k,
        });
    }
    let scale = cfg.lambda * cfg.effective_m(rows) / cfg.beta;
    let u = cfg.prior.as_slice();
    let mut y = Array2::zeros((rows, k));
    let mut numer = vec![0.0; k];
    for i in 0..rows {
        let mut denom = 1.0;
        for c in 0..k {
            let pull = scale * u[c] * support.get(c, i);
            numer[c] = sigma[[i, c]] + pull;
            denom += pull;
        }
        for c in 0..k {
            y[[i, c]] = numer[c] / denom;
        }
    }
    Ok(y)
}

/// One fused E+M iteration writing into `out`; returns the max-abs change.
fn em_iteration(
    sigma: &[f64],
    y: &[f64],
    out: &mut [f64],
    k: usize,
    scale: f64,
    u: &[f64],
    sums: &mut [f64],
    weights: &mut [f64],
) -> Result<f64> {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for row in y.chunks_exact(k) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, (w, &s)) in weights.iter_mut().zip(sums.iter()).enumerate() {
        if !(s > 0.0) {
            return Err(Error::DegenerateCluster { cluster: c });
        }
        *w = scale * u[c] / s;
    }
    let mut delta = 0.0f64;
    for ((srow, yrow), orow) in sigma
        .chunks_exact(k)
        .zip(y.chunks_exact(k))
        .zip(out.chunks_exact_mut(k))
    {
        let mut denom = 1.0;
        for c in 0..k {
            let pull = weights[c] * yrow[c];
            orow[c] = srow[c] + pull;
            denom += pull;
        }
        let inv = 1.0 / denom;
        for c in 0..k {
            orow[c] *= inv;
            delta = delta.max((orow[c] - yrow[c]).abs());
        }
    }
    Ok(delta)
}

/// Alternates E- and M-steps from `warm_start` (default `y = σ`) until the max-abs change of
/// `y` drops below `cfg.tolerance` or `cfg.max_iterations` is reached.
pub fn solve_em(
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
    warm_start: Option<ArrayView2<'_, f64>>,
) -> Result<PseudoLabelState> {
    check_sigma(sigma, cfg)?;
    let (rows, k) = sigma.dim();
    let mut y = match warm_start {
        Some(w) => {
            check_same_shape(w, sigma)?;
            check_rows_on_simplex(w, "warm start")?;
            w.as_standard_layout().into_owned()
        }
        None => sigma.as_standard_layout().into_owned(),
    };
    let sigma = sigma.as_standard_layout();
    let sigma_s = sigma.as_slice().expect("standard layout");
    let scale = cfg.lambda * cfg.effective_m(rows) / cfg.beta;
    let u = cfg.prior.as_slice();
    let mut next = Array2::zeros((rows, k));
    let mut sums = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(objective_unchecked(y.view(), sigma.view(), cfg));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let delta = em_iteration(
            sigma_s,
            y.as_slice().expect("standard layout"),
            next.as_slice_mut().expect("standard layout"),
            k,
            scale,
            u,
            &mut sums,
            &mut weights,
        )?;
        std::mem::swap(&mut y, &mut next);
        iterations += 1;
        if cfg.record_trace {
            trace.push(objective_unchecked(y.view(), sigma.view(), cfg));
        }
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let support = e_step(y.view())?;
    Ok(PseudoLabelState {
        y,
        support,
        iterations,
        objective_trace: trace,
        converged,
        fallback_steps: 0,
    })
}

/// Batch-mode EM: `M` in the M-step is the batch size. On a degenerate cluster the solve is
/// restarted once from `0.9 σ + 0.1 u`.
pub fn batch_em_update(
    sigma_batch: ArrayView2<'_, f64>,
    cfg: &EmConfig,
    warm_start: Option<ArrayView2<'_, f64>>,
) -> Result<PseudoLabelState> {
    let cfg = EmConfig {
        scale_m: Some(sigma_batch.nrows()),
        ..cfg.clone()
    };
    match solve_em(sigma_batch, &cfg, warm_start) {
        Err(Error::DegenerateCluster { .. }) => {
            let u = cfg.prior.as_slice();
            let mut blended = sigma_batch.to_owned();
            for mut row in blended.axis_iter_mut(Axis(0)) {
                for (v, &uk) in row.iter_mut().zip(u) {
                    *v = 0.9 * *v + 0.1 * uk;
                }
            }
            solve_em(sigma_batch, &cfg, Some(blended.view()))
        }
        other => other,
    }
}

/// Solves `A x = b` in place for symmetric positive definite `A` (row-major `n × n`).
/// Returns `false` if `A` is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v -= a[i * n + p] * b[p];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in (i + 1)..n {
            v -= a[p * n + i] * b[p];
        }
        b[i] = v / a[i * n + i];
    }
    true
}

/// Damped Newton with the row-sum constraints handled exactly.
///
/// The Hessian is `D + Σ_k c_k 1_k 1_kᵀ` with `D_ik = (β/M) σ_ik / y_ik²` and
/// `c_k = λ u_k / s_k²`, `s_k = Σ_i y_ik`. Writing the Newton direction as
/// `d_ik = −w_ik (g_ik + z_k + ν_i)` with `w = 1/D`, the row constraints fix `ν`, and the
/// coupling variables solve the `K × K` system `(C⁻¹ + diag(Ω) − G) z = −a`, where
/// `Ω_k = Σ_i w_ik`, `G_kl = Σ_i w_ik w_il / W_i`, `W_i = Σ_k w_ik` and
/// `a_k = Σ_i w_ik ĝ_ik` with the row-centred gradient `ĝ`. Steps are cut back to stay inside
/// the simplex and then backtracked until the objective decreases sufficiently.
pub fn solve_newton(sigma: ArrayView2<'_, f64>, cfg: &EmConfig) -> Result<PseudoLabelState> {
    check_sigma(sigma, cfg)?;
    let (rows, k) = sigma.dim();
    let m = cfg.effective_m(rows);
    let u = cfg.prior.as_slice();
    let bm = cfg.beta / m;
    // Start strictly inside the simplex.
    let mut y = sigma.to_owned();
    for mut row in y.axis_iter_mut(Axis(0)) {
        for (v, &uk) in row.iter_mut().zip(u) {
            *v = 0.99 * *v + 0.01 * (0.5 * uk + 0.5 / k as f64);
        }
    }
    let mut f = objective_unchecked(y.view(), sigma, cfg);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut fallback_steps = 0;
    let mut converged = false;

    let mut g = Array2::<f64>::zeros((rows, k));
    let mut w = Array2::<f64>::zeros((rows, k));
    let mut p = Array2::<f64>::zeros((rows, k));
    let mut d = Array2::<f64>::zeros((rows, k));
    let mut row_w = vec![0.0; rows];

    while iterations < cfg.max_iterations {
        iterations += 1;
        let s = column_sums(y.view());
        let fair_grad: Vec<f64> = (0..k)
            .map(|c| {
                if u[c] > 0.0 {
                    cfg.lambda * u[c] / s[c]
                } else {
                    0.0
                }
            })
            .collect();
        let coupling: Vec<f64> = (0..k)
            .map(|c| {
                if u[c] > 0.0 {
                    cfg.lambda * u[c] / (s[c] * s[c])
                } else {
                    0.0
                }
            })
            .collect();
        for i in 0..rows {
            let mut wsum = 0.0;
            for c in 0..k {
                let yi = y[[i, c]];
                let si = sigma[[i, c]];
                g[[i, c]] = -bm * si / yi - fair_grad[c];
                let h = (bm * si / (yi * yi)).max(1e-14);
                w[[i, c]] = 1.0 / h;
                wsum += w[[i, c]];
            }
            row_w[i] = wsum;
            let mut centre = 0.0;
            for c in 0..k {
                p[[i, c]] = w[[i, c]] / wsum;
                centre += p[[i, c]] * g[[i, c]];
            }
            for c in 0..k {
                g[[i, c]] -= centre;
            }
        }
        // g now holds the row-centred gradient ĝ.
        let active: Vec<usize> = (0..k).filter(|&c| coupling[c] > 0.0).collect();
        let n = active.len();
        let mut z = vec![0.0; k];
        let mut used_fallback = false;
        if n > 0 {
            let mut a = vec![0.0; n];
            let mut mat = vec![0.0; n * n];
            for i in 0..rows {
                let wi = row_w[i];
                for (ai, &c) in active.iter().enumerate() {
                    let wc = w[[i, c]];
                    a[ai] += wc * g[[i, c]];
                    mat[ai * n + ai] += wc;
                    let scaled = wc / wi;
                    for (bi, &l) in active.iter().enumerate().take(ai + 1) {
                        mat[ai * n + bi] -= scaled * w[[i, l]];
                    }
                }
            }
            for ai in 0..n {
                mat[ai * n + ai] += 1.0 / coupling[active[ai]];
                for bi in 0..ai {
                    mat[bi * n + ai] = mat[ai * n + bi];
                }
            }
            let mut rhs: Vec<f64> = a.iter().map(|v| -v).collect();
            if cholesky_solve(&mut mat, &mut rhs, n) {
                for (ai, &c) in active.iter().enumerate() {
                    z[c] = rhs[ai];
                }
            } else {
                used_fallback = true;
                fallback_steps += 1;
            }
        }
        let mut slope = 0.0;
        for i in 0..rows {
            let zbar: f64 = (0..k).map(|c| p[[i, c]] * z[c]).sum();
            for c in 0..k {
                d[[i, c]] = -w[[i, c]] * (g[[i, c]] + z[c] - zbar);
                slope += g[[i, c]] * d[[i, c]];
            }
        }
        // ĝ and the full gradient differ by a per-row constant, which is orthogonal to d.
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        let mut t: f64 = 1.0;
        for (&yv, &dv) in y.iter().zip(d.iter()) {
            if dv < 0.0 {
                t = t.min(0.99 * yv / -dv);
            }
        }
        let mut accepted = false;
        let mut trial = y.clone();
        for _ in 0..60 {
            trial.zip_mut_with(&y, |tv, &yv| *tv = yv);
            trial.scaled_add(t, &d);
            let f_new = objective_unchecked(trial.view(), sigma, cfg);
            if f_new <= f + 1e-4 * t * slope {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        let change = d.iter().fold(0.0f64, |mx, v| mx.max((t * v).abs()));
        std::mem::swap(&mut y, &mut trial);
        for mut row in y.axis_iter_mut(Axis(0)) {
            let total: f64 = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        f = objective_unchecked(y.view(), sigma, cfg);
        trace.push(f);
        if change < cfg.tolerance && !used_fallback {
            converged = true;
            break;
        }
    }
    let support = e_step(y.view())?;
    Ok(PseudoLabelState {
        y,
        support,
        iterations,
        objective_trace: trace,
        converged,
        fallback_steps,
    })
}

/// Objective minimized by [`solve_mirror_descent`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MirrorObjective {
    /// The pseudo-label objective `E(y)`.
    Em,
    /// `(1/M) Σ_i H(y_i, σ_i) + λ KL(ȳ‖u)`, the y-part of the MI-ADM loss.
    MiAdm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MirrorDescentConfig {
    pub objective: MirrorObjective,
    pub max_iterations: usize,
    /// Rejected steps in a row before giving up.
    pub max_rejections: usize,
}

impl Default for MirrorDescentConfig {
    fn default() -> Self {
        MirrorDescentConfig {
            objective: MirrorObjective::Em,
            max_iterations: 100_000,
            max_rejections: 50,
        }
    }
}

/// The MI-ADM y-objective.
pub fn mi_adm_objective(
    y: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
) -> Result<f64> {
    check_same_shape(y, sigma)?;
    let m = y.nrows() as f64;
    let mut ce = 0.0;
    for (&v, &s) in y.iter().zip(sigma.iter()) {
        if v > 0.0 {
            if s <= 0.0 {
                return Ok(f64::INFINITY);
            }
            ce -= v * s.ln();
        }
    }
    let y_bar: Vec<f64> = column_sums(y).iter().map(|s| s / m).collect();
    Ok(ce / m + cfg.lambda * crate::simplex::kl_of(&y_bar, cfg.prior.as_slice()))
}

fn mirror_value(
    objective: MirrorObjective,
    y: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
) -> f64 {
    match objective {
        MirrorObjective::Em => objective_unchecked(y, sigma, cfg),
        MirrorObjective::MiAdm => mi_adm_objective(y, sigma, cfg).unwrap_or(f64::INFINITY),
    }
}

fn mirror_gradient(
    objective: MirrorObjective,
    y: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
    out: &mut Array2<f64>,
) {
    let (rows, k) = y.dim();
    let s = column_sums(y);
    let u = cfg.prior.as_slice();
    match objective {
        MirrorObjective::Em => {
            let m = cfg.effective_m(rows);
            let bm = cfg.beta / m;
            for i in 0..rows {
                for c in 0..k {
                    let fair = if u[c] > 0.0 {
                        cfg.lambda * u[c] / s[c]
                    } else {
                        0.0
                    };
                    let v = y[[i, c]];
                    let data = if sigma[[i, c]] > 0.0 {
                        bm * sigma[[i, c]] / v
                    } else {
                        0.0
                    };
                    out[[i, c]] = -data - fair;
                }
            }
        }
        MirrorObjective::MiAdm => {
            let m = rows as f64;
            for i in 0..rows {
                for c in 0..k {
                    let ln_sigma = sigma[[i, c]].max(1e-300).ln();
                    let y_bar = (s[c] / m).max(1e-300);
                    let fair = if u[c] > 0.0 {
                        cfg.lambda * ((y_bar / u[c]).ln() + 1.0)
                    } else {
                        0.0
                    };
                    out[[i, c]] = (-ln_sigma + fair) / m;
                }
            }
        }
    }
}

/// Entropic mirror descent: `y_i ← y_i ⊙ exp(−η ∇_i) / Z_i`. A step that increases the
/// objective is rejected and `η` halved; an accepted step grows `η` by 1.5×. Converged when an
/// accepted (or rejected) step moves `y` by less than the tolerance.
pub fn solve_mirror_descent(
    sigma: ArrayView2<'_, f64>,
    cfg: &EmConfig,
    md: &MirrorDescentConfig,
) -> Result<PseudoLabelState> {
    check_sigma(sigma, cfg)?;
    let (rows, k) = sigma.dim();
    let u = cfg.prior.as_slice();
    let mut y = sigma.to_owned();
    for mut row in y.axis_iter_mut(Axis(0)) {
        for (v, &uk) in row.iter_mut().zip(u) {
            *v = 0.5 * *v + 0.5 * (0.5 * uk + 0.5 / k as f64);
        }
    }
    let m = cfg.effective_m(rows);
    let mut eta = match md.objective {
        MirrorObjective::Em => m / (cfg.beta + cfg.lambda),
        MirrorObjective::MiAdm => rows as f64 / (1.0 + cfg.lambda),
    };
    let mut f = mirror_value(md.objective, y.view(), sigma, cfg);
    let mut trace = vec![f];
    let mut grad = Array2::<f64>::zeros((rows, k));
    let mut trial = Array2::<f64>::zeros((rows, k));
    let mut rejections = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < md.max_iterations {
        iterations += 1;
        mirror_gradient(md.objective, y.view(), sigma, cfg, &mut grad);
        let mut change = 0.0f64;
        for i in 0..rows {
            let mut best = f64::NEG_INFINITY;
            for c in 0..k {
                let yv = y[[i, c]];
                let l = if yv > 0.0 {
                    yv.ln() - eta * grad[[i, c]]
                } else {
                    f64::NEG_INFINITY
                };
                trial[[i, c]] = l;
                best = best.max(l);
            }
            let mut total = 0.0;
            for c in 0..k {
                let e = (trial[[i, c]] - best).exp();
                trial[[i, c]] = e;
                total += e;
            }
            for c in 0..k {
                trial[[i, c]] /= total;
                change = change.max((trial[[i, c]] - y[[i, c]]).abs());
            }
        }
        let f_new = mirror_value(md.objective, trial.view(), sigma, cfg);
        if f_new <= f {
            std::mem::swap(&mut y, &mut trial);
            f = f_new;
            trace.push(f);
            rejections = 0;
            eta *= 1.5;
            if change < cfg.tolerance {
                converged = true;
                break;
            }
        } else {
            if change < cfg.tolerance {
                converged = true;
                break;
            }
            rejections += 1;
            if rejections >= md.max_rejections {
                return Err(Error::Divergence(format!(
                    "mirror descent: objective increased on {rejections} consecutive steps"
                )));
            }
            eta *= 0.5;
        }
    }
    let support = e_step(y.view())?;
    Ok(PseudoLabelState {
        y,
        support,
        iterations,
        objective_trace: trace,
        converged,
        fallback_steps: 0,
    })
}

/// `M × K` predictions drawn from a symmetric Dirichlet(1).
pub fn dirichlet_predictions(m: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((m, k));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            let e: f64 = Exp1.sample(&mut rng);
            *v = e;
            total += e;
        }
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// One row of the solver timing table (means over trials).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub solver: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda: f64,
    pub iterations: f64,
    pub wall_time_seconds: f64,
    pub final_objective: f64,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub m: usize,
    pub lambda: f64,
    pub trials: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub include_mirror_descent: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ks: vec![2, 20, 200],
            m: 1000,
            lambda: 1.0,
            trials: 20,
            tolerance: 1e-6,
            seed: 0,
            include_mirror_descent: true,
        }
    }
}

/// Times EM, Newton and (optionally) mirror descent on Dirichlet(1) predictions. EM runs
/// without objective tracing; all final objectives are evaluated outside the timed region.
pub fn bench_solvers(bench: &BenchConfig) -> Result<Vec<BenchRow>> {
    if bench.trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if bench.ks.is_empty() || bench.ks.iter().any(|&k| k < 2) {
        return Err(Error::invalid("every K must be >= 2"));
    }
    if bench.m == 0 {
        return Err(Error::invalid("M must be >= 1"));
    }
    let mut rows = Vec::new();
    for (ki, &k) in bench.ks.iter().enumerate() {
        let cfg = EmConfig {
            lambda: bench.lambda,
            tolerance: bench.tolerance,
            record_trace: false,
            ..EmConfig::new(k)
        };
        let mut names = vec!["em", "newton"];
        if bench.include_mirror_descent {
            names.push("mirror_descent");
        }
        let mut acc = vec![(0.0, 0.0, 0.0); names.len()];
        for trial in 0..bench.trials {
            let seed = bench.seed.wrapping_add((ki * 1_000_003 + trial) as u64);
            let sigma = dirichlet_predictions(bench.m, k, seed);
            for (si, name) in names.iter().enumerate() {
                let start = Instant::now();
                let state = match *name {
                    "em" => solve_em(sigma.view(), &cfg, None)?,
                    "newton" => solve_newton(sigma.view(), &cfg)?,
                    _ => solve_mirror_descent(sigma.view(), &cfg, &MirrorDescentConfig::default())?,
                };
                let elapsed = start.elapsed().as_secs_f64();
                let objective = objective_unchecked(state.y.view(), sigma.view(), &cfg);
                acc[si].0 += state.iterations as f64;
                acc[si].1 += elapsed;
                acc[si].2 += objective;
            }
        }
        let n = bench.trials as f64;
        for (name, (it, time, obj)) in names.iter().zip(acc) {
            rows.push(BenchRow {
                solver: name.to_string(),
                k,
                m: bench.m,
                lambda: bench.lambda,
                iterations: it / n,
                wall_time_seconds: time / n,
                final_objective: obj / n,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}
