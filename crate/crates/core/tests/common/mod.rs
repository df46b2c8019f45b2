//! Property checks shared by the per-area test targets and the acceptance suite. Each check
//! returns `Err` with a description of the first violation.

#![allow(dead_code)]

use entclust::eval::{hungarian_accuracy, raw_accuracy, ConfusionMatrix};
use entclust::losses::{
    add_regularizer_gradient, add_seeded_gradients, evaluate, logit_gradients, loss_ours_beta,
    seeded_loss_batch, LossConfig, LossKind,
};
use entclust::model::{GradientBuffer, SoftmaxModel};
use entclust::simplex::{cross_entropy, entropy, kl_div, softmax, ProbVector};
use entclust::solvers::{
    dirichlet_predictions, e_step, em_objective, jensen_bound, m_step, solve_em,
    solve_mirror_descent, solve_newton, EmConfig, MirrorDescentConfig,
};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// Solver properties.

fn random_prior(rng: &mut ChaCha8Rng, k: usize) -> ProbVector {
    ProbVector::new((0..k).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap()
}

fn random_em_instance(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>, EmConfig) {
    let m = rng.random_range(2..40);
    let k = rng.random_range(2..8);
    let sigma = dirichlet_predictions(m, k, rng.random());
    let y = dirichlet_predictions(m, k, rng.random());
    let cfg = EmConfig {
        lambda: rng.random_range(0.0..5.0),
        beta: rng.random_range(0.5..2.0),
        prior: random_prior(rng, k),
        tolerance: 1e-12,
        max_iterations: 30,
        ..EmConfig::new(k)
    };
    (sigma, y, cfg)
}

pub fn em_monotone(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..instances {
        let (sigma, y0, cfg) = random_em_instance(&mut rng);
        let state = solve_em(sigma.view(), &cfg, Some(y0.view())).map_err(|e| e.to_string())?;
        for w in state.objective_trace.windows(2) {
            ensure!(
                w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0),
                "instance {i}: objective rose {} -> {}",
                w[0],
                w[1]
            );
        }
    }
    Ok(())
}

pub fn jensen_tight(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..instances {
        let (sigma, y, cfg) = random_em_instance(&mut rng);
        let support = e_step(y.view()).unwrap();
        let bound = jensen_bound(y.view(), &support, sigma.view(), &cfg).unwrap();
        let exact = em_objective(y.view(), sigma.view(), &cfg).unwrap();
        ensure!(
            (bound - exact).abs() <= 1e-10 * exact.abs().max(1.0),
            "instance {i}: bound {bound} vs objective {exact}"
        );
        // Any other support gives an upper bound.
        let other =
            e_step(dirichlet_predictions(y.nrows(), y.ncols(), rng.random()).view()).unwrap();
        let loose = jensen_bound(y.view(), &other, sigma.view(), &cfg).unwrap();
        ensure!(
            loose >= exact - 1e-10 * exact.abs().max(1.0),
            "instance {i}: bound {loose} below objective {exact}"
        );
    }
    Ok(())
}

pub fn convex_segments(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..instances {
        let (sigma, y1, cfg) = random_em_instance(&mut rng);
        let y2 = dirichlet_predictions(y1.nrows(), y1.ncols(), rng.random());
        let e1 = em_objective(y1.view(), sigma.view(), &cfg).unwrap();
        let e2 = em_objective(y2.view(), sigma.view(), &cfg).unwrap();
        for step in 1..10 {
            let a = step as f64 / 10.0;
            let mix = &y1 * (1.0 - a) + &y2 * a;
            let em = em_objective(mix.view(), sigma.view(), &cfg).unwrap();
            ensure!(
                em <= (1.0 - a) * e1 + a * e2 + 1e-10,
                "instance {i}: chord violated at a={a}"
            );
        }
    }
    Ok(())
}

pub fn m_step_row_sums(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..instances {
        let (sigma, y, cfg) = random_em_instance(&mut rng);
        let support = e_step(y.view()).unwrap();
        let next = m_step(sigma.view(), &support, &cfg).unwrap();
        for row in next.axis_iter(Axis(0)) {
            ensure!(
                (row.sum() - 1.0).abs() <= 1e-12,
                "instance {i}: row sum {}",
                row.sum()
            );
            ensure!(
                row.iter().all(|&v| v >= 0.0),
                "instance {i}: negative entry"
            );
        }
    }
    Ok(())
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn solvers_agree(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..trials {
        let k = [2, 20, 200][trial % 3];
        let sigma = dirichlet_predictions(40, k, rng.random());
        let cfg = EmConfig {
            lambda: rng.random_range(0.1..3.0),
            tolerance: 1e-11,
            max_iterations: 100_000,
            ..EmConfig::new(k)
        };
        let em = solve_em(sigma.view(), &cfg, None).unwrap();
        let newton = solve_newton(sigma.view(), &cfg).unwrap();
        let md = solve_mirror_descent(sigma.view(), &cfg, &MirrorDescentConfig::default()).unwrap();
        let e_em = em_objective(em.y.view(), sigma.view(), &cfg).unwrap();
        let e_newton = em_objective(newton.y.view(), sigma.view(), &cfg).unwrap();
        let e_md = em_objective(md.y.view(), sigma.view(), &cfg).unwrap();
        ensure!(
            rel_gap(e_em, e_newton) <= 1e-6,
            "K={k}: em {e_em} newton {e_newton}"
        );
        ensure!(
            rel_gap(e_em, e_md) <= 1e-6,
            "K={k}: em {e_em} mirror {e_md}"
        );
    }
    Ok(())
}

// Gradient checks.

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const FD_INSTANCES: usize = 100;

struct GradInstance {
    model: SoftmaxModel,
    x: Array2<f64>,
    pseudo: Option<Array2<f64>>,
    seeds: Vec<Option<usize>>,
    cfg: LossConfig,
}

fn random_simplex_rows(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Array2<f64> {
    let mut y = Array2::from_shape_simple_fn((m, k), || rng.random_range(0.05..1.0));
    for mut row in y.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

fn random_grad_instance(
    rng: &mut ChaCha8Rng,
    kind: LossKind,
    hidden: bool,
    seeded: bool,
) -> GradInstance {
    let k = rng.random_range(2..=5);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=6);
    let x = Array2::from_shape_simple_fn((m, n), || rng.random_range(-2.0..2.0));
    let mut model = if hidden {
        let width = rng.random_range(2..=5);
        let mut model = SoftmaxModel::with_hidden(k, n, width, rng.random());
        let layer = model.hidden.as_mut().unwrap();
        layer.bias = Array1::from_shape_simple_fn(width, || rng.random_range(-0.5..0.5));
        model
    } else {
        SoftmaxModel::linear(k, n, rng.random())
    };
    model.bias = Array1::from_shape_simple_fn(k, || rng.random_range(-0.5..0.5));
    let mut cfg = LossConfig::new(kind, k);
    cfg.lambda = rng.random_range(0.0..3.0);
    cfg.beta = rng.random_range(0.0..=1.0);
    if cfg.gamma > 0.0 {
        cfg.gamma = rng.random_range(0.0..0.5);
    }
    let pseudo = kind
        .uses_pseudo_labels()
        .then(|| random_simplex_rows(rng, m, k));
    let seeds = (0..m)
        .map(|_| (seeded && rng.random_bool(0.5)).then(|| rng.random_range(0..k)))
        .collect();
    GradInstance {
        model,
        x,
        pseudo,
        seeds,
        cfg,
    }
}

/// Whether any ReLU pre-activation sits within `margin` of its kink.
fn near_kink(inst: &GradInstance, margin: f64) -> bool {
    let fwd = inst.model.forward_batch(inst.x.view()).unwrap();
    fwd.hidden
        .map(|(pre, _)| pre.iter().any(|v| v.abs() < margin))
        .unwrap_or(false)
}

fn total_loss(inst: &GradInstance, model: &SoftmaxModel) -> f64 {
    let fwd = model.forward_batch(inst.x.view()).unwrap();
    let base = evaluate(
        fwd.probs.view(),
        inst.pseudo.as_ref().map(|p| p.view()),
        Some(model),
        &inst.cfg,
    )
    .unwrap();
    seeded_loss_batch(fwd.probs.view(), &inst.seeds, base)
        .unwrap()
        .total
}

fn analytic(inst: &GradInstance) -> GradientBuffer {
    let fwd = inst.model.forward_batch(inst.x.view()).unwrap();
    let mut up = logit_gradients(
        fwd.probs.view(),
        inst.pseudo.as_ref().map(|p| p.view()),
        &inst.cfg,
    )
    .unwrap();
    add_seeded_gradients(&mut up, fwd.probs.view(), &inst.seeds).unwrap();
    let mut grads = inst
        .model
        .backward_batch(inst.x.view(), &fwd, up.view())
        .unwrap();
    add_regularizer_gradient(&mut grads, &inst.model, &inst.cfg);
    grads
}

/// Flattened (analytic, finite-difference) pairs over every parameter.
fn compare(inst: &GradInstance) -> (Vec<f64>, Vec<f64>) {
    let g = analytic(inst);
    let mut a = Vec::new();
    let mut fd = Vec::new();
    let mut probe = |a_val: f64, set: &dyn Fn(&mut SoftmaxModel, f64)| {
        let mut plus = inst.model.clone();
        set(&mut plus, FD_STEP);
        let mut minus = inst.model.clone();
        set(&mut minus, -FD_STEP);
        a.push(a_val);
        fd.push((total_loss(inst, &plus) - total_loss(inst, &minus)) / (2.0 * FD_STEP));
    };
    for ((r, c), &v) in g.weights.indexed_iter() {
        probe(v, &|m, h| m.weights[[r, c]] += h);
    }
    for (r, &v) in g.bias.indexed_iter() {
        probe(v, &|m, h| m.bias[r] += h);
    }
    if let (Some(hw), Some(hb)) = (&g.hidden_weights, &g.hidden_bias) {
        for ((r, c), &v) in hw.indexed_iter() {
            probe(v, &|m, h| m.hidden.as_mut().unwrap().weights[[r, c]] += h);
        }
        for (r, &v) in hb.indexed_iter() {
            probe(v, &|m, h| m.hidden.as_mut().unwrap().bias[r] += h);
        }
    }
    (a, fd)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Worst relative error over `FD_INSTANCES` random instances of one combination.
pub fn worst_gradient_error(kind: LossKind, hidden: bool, seeded: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < FD_INSTANCES {
        let inst = random_grad_instance(&mut rng, kind, hidden, seeded);
        if near_kink(&inst, 1e-4) {
            continue;
        }
        let (a, fd) = compare(&inst);
        worst = worst.max(relative_error(&a, &fd));
        done += 1;
    }
    worst
}

/// Every loss on the linear and hidden-layer models, plus the seeded supervised term.
pub fn gradients_match_finite_differences() -> Check {
    let mut failures = Vec::new();
    for (i, kind) in LossKind::ALL.into_iter().enumerate() {
        for hidden in [false, true] {
            let err = worst_gradient_error(kind, hidden, false, 100 + i as u64 * 2 + hidden as u64);
            if err >= FD_TOLERANCE {
                failures.push(format!("{kind} hidden={hidden}: {err:e}"));
            }
        }
    }
    for hidden in [false, true] {
        let err = worst_gradient_error(LossKind::Ours, hidden, true, 7 + hidden as u64);
        if err >= FD_TOLERANCE {
            failures.push(format!("ours+seeds hidden={hidden}: {err:e}"));
        }
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(())
}

// Evaluation.

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

pub fn hungarian_brute_force(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..cases {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..60);
        let pred: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let (acc, _) = hungarian_accuracy(&pred, &truth, k).unwrap();
        let cm = ConfusionMatrix::new(&pred, &truth, k).unwrap();
        let best = permutations(k)
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(c, &l)| cm.counts[[c, l]])
                    .sum::<u64>()
            })
            .max()
            .unwrap();
        ensure!(
            (acc * m as f64).round() as u64 == best,
            "case {case}: hungarian {acc} vs brute force {}",
            best as f64 / m as f64
        );
        ensure!(
            acc >= raw_accuracy(&pred, &truth).unwrap(),
            "case {case}: below identity"
        );
    }
    Ok(())
}

// Simplex invariants.

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> ProbVector {
    ProbVector::new((0..k).map(|_| rng.random_range(1e-6..1.0)).collect()).unwrap()
}

pub fn simplex_fuzz(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..cases {
        let k = rng.random_range(2..12);
        let scale = 10f64.powi(rng.random_range(-2..5));
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();
        let p = softmax(&logits).map_err(|e| format!("case {case}: {e}"))?;
        let sum: f64 = p.as_slice().iter().sum();
        ensure!(
            (sum - 1.0).abs() <= 1e-12,
            "case {case}: softmax sums to {sum}"
        );
        ensure!(
            p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)),
            "case {case}: softmax left [0, 1]"
        );
        let shifted: Vec<f64> = logits.iter().map(|l| l + 3.0).collect();
        let q = softmax(&shifted).unwrap();
        ensure!(
            p.as_slice()
                .iter()
                .zip(q.as_slice())
                .all(|(a, b)| (a - b).abs() <= 1e-12),
            "case {case}: softmax not shift invariant"
        );

        let a = random_simplex(&mut rng, k);
        let b = random_simplex(&mut rng, k);
        let h = entropy(&a);
        ensure!(
            (-1e-12..=(k as f64).ln() + 1e-12).contains(&h),
            "case {case}: entropy {h} outside [0, ln K]"
        );
        ensure!(kl_div(&a, &b).unwrap() >= 0.0, "case {case}: negative KL");
        let ce = cross_entropy(&a, &b).unwrap();
        ensure!(
            (ce - h - kl_div(&a, &b).unwrap()).abs() <= 1e-10,
            "case {case}: H(p,q) != H(p) + KL(p||q)"
        );
    }
    Ok(())
}

// β analysis on a per-example grid.

fn per_example_beta(beta: f64, s: f64, y: &[f64]) -> f64 {
    let model = SoftmaxModel::zeros(2, 1);
    let mut cfg = LossConfig::new(LossKind::Ours, 2);
    cfg.lambda = 0.0;
    cfg.gamma = 0.0;
    cfg.beta = beta;
    let sigma = ProbVector::new(vec![s, 1.0 - s]).unwrap();
    let target = ProbVector::new(y.to_vec()).unwrap();
    loss_ours_beta(&[sigma], &[target], &model, &cfg)
        .unwrap()
        .total
}

/// β = 0.5 with y = (0.9, 0.1) is concave in σ₁ with its minimum on the boundary of the grid;
/// β = 1 is linear.
pub fn beta_grid_shape() -> Check {
    let y = [0.9, 0.1];
    let half: Vec<f64> = (1..1000)
        .map(|i| per_example_beta(0.5, i as f64 * 1e-3, &y))
        .collect();
    for (i, w) in half.windows(3).enumerate() {
        ensure!(
            w[0] - 2.0 * w[1] + w[2] <= 1e-12,
            "beta=0.5: positive second difference at grid index {}",
            i + 1
        );
    }
    let argmin = half
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    ensure!(
        argmin == 0 || argmin == half.len() - 1,
        "beta=0.5: interior minimum at index {argmin}"
    );
    let one: Vec<f64> = (1..100)
        .map(|i| per_example_beta(1.0, i as f64 / 100.0, &y))
        .collect();
    for w in one.windows(3) {
        ensure!(
            (w[0] - 2.0 * w[1] + w[2]).abs() < 1e-12,
            "beta=1: not linear"
        );
    }
    Ok(())
}
