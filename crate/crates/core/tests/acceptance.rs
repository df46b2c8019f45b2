//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion, then fails if
//! any criterion failed.
//!
//! MNIST is read from `MNIST_DIR`, falling back to `data/mnist` at the workspace root. Build
//! with optimizations (the workspace test profile already does); the MNIST criteria take
//! several minutes on one core.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use entclust::data::{gen_anisotropic_pair, gen_blobs, gen_margin_gap, load_mnist, split, Dataset};
use entclust::eval::{geometric_margin, hungarian_accuracy};
use entclust::kmeans::kmeans_fit;
use entclust::losses::{LossConfig, LossKind};
use entclust::model::{OptimizerKind, SoftmaxModel};
use entclust::solvers::{
    dirichlet_predictions, em_objective, solve_em, solve_newton, EmConfig,
};
use entclust::trainer::{
    corruption_robustness_experiment, train, train_with_restarts, CorruptionRow, TrainConfig,
    TrainResult, YUpdateMode,
};
use entclust::viz::{render_decision_regions, RenderSpec};

type Outcome = Result<String, String>;

const NORM_BOUND: f64 = 1e4;

fn say(line: &str) {
    // Bypasses libtest's capture so the lines always reach the console.
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn pct(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.2}", 100.0 * x)).collect();
    parts.join(" ")
}

fn records_text(result: &TrainResult) -> String {
    result
        .records
        .iter()
        .map(|r| r.to_json_line() + "\n")
        .collect()
}

fn svg(result: &TrainResult, ds: &Dataset) -> String {
    render_decision_regions(&result.model, ds, &RenderSpec::default()).expect("2-D render")
}

/// Artifacts kept from earlier criteria for the determinism rerun.
#[derive(Default)]
struct Suite {
    max_norm: f64,
    mnist: Option<Dataset>,
    mnist_ours_seed0: Option<TrainResult>,
    anisotropic_seed0: Option<(String, String)>,
    margin_seed0: Option<(String, String)>,
    corruption_seed0: Option<Vec<CorruptionRow>>,
}

impl Suite {
    fn observe(&mut self, result: &TrainResult) {
        for r in &result.records {
            self.max_norm = self.max_norm.max(r.classifier_norm);
        }
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_config(kind: LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::new(LossConfig::new(kind, 10))
    }
}

fn mnist_run(ds: &Dataset, kind: LossKind, seed: u64, mode: YUpdateMode) -> Result<TrainResult, String> {
    let cfg = TrainConfig {
        y_update_mode: mode,
        ..mnist_config(kind, seed)
    };
    train(ds, SoftmaxModel::linear(10, ds.dim(), seed), &cfg).map_err(|e| e.to_string())
}

fn criterion_1(suite: &mut Suite) -> Outcome {
    let ds = suite
        .mnist
        .clone()
        .ok_or("MNIST not found; set MNIST_DIR")?;
    let mut ours = Vec::new();
    let mut decay = Vec::new();
    for seed in 0..6 {
        let r = mnist_run(&ds, LossKind::Ours, seed, YUpdateMode::PerBatch)?;
        suite.observe(&r);
        ours.push(r.final_accuracy().unwrap());
        if seed == 0 {
            suite.mnist_ours_seed0 = Some(r);
        }
        let r = mnist_run(&ds, LossKind::MiDecay, seed, YUpdateMode::PerBatch)?;
        suite.observe(&r);
        decay.push(r.final_accuracy().unwrap());
    }
    let labels = ds.labels.as_ref().unwrap();
    let mut km = Vec::new();
    for seed in 0..3 {
        let state = kmeans_fit(ds.features.view(), 10, seed, 10).map_err(|e| e.to_string())?;
        km.push(hungarian_accuracy(&state.assignments, labels, 10).unwrap().0);
    }
    let (mo, md, mk) = (mean(&ours), mean(&decay), mean(&km));
    let detail = format!(
        "ours {:.2}% [{}], mi_decay {:.2}% [{}], kmeans {:.2}% [{}]",
        100.0 * mo,
        pct(&ours),
        100.0 * md,
        pct(&decay),
        100.0 * mk,
        pct(&km)
    );
    let ok = (0.558..=0.658).contains(&mo)
        && (0.552..=0.652).contains(&md)
        && mo >= mk + 0.02
        && md >= mk + 0.02;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for k in [2, 20, 200] {
        let cfg = EmConfig {
            lambda: 1.0,
            tolerance: 1e-6,
            record_trace: false,
            ..EmConfig::new(k)
        };
        let (mut t_em, mut t_newton) = (0.0, 0.0);
        let mut worst_gap: f64 = 0.0;
        let mut max_iters = 0;
        for trial in 0..20 {
            let sigma = dirichlet_predictions(1000, k, 1000 * k as u64 + trial);
            let start = Instant::now();
            let em = solve_em(sigma.view(), &cfg, None).map_err(|e| e.to_string())?;
            t_em += start.elapsed().as_secs_f64();
            let start = Instant::now();
            let newton = solve_newton(sigma.view(), &cfg).map_err(|e| e.to_string())?;
            t_newton += start.elapsed().as_secs_f64();
            let e1 = em_objective(em.y.view(), sigma.view(), &cfg).unwrap();
            let e2 = em_objective(newton.y.view(), sigma.view(), &cfg).unwrap();
            worst_gap = worst_gap.max(common::rel_gap(e1, e2));
            max_iters = max_iters.max(em.iterations);
        }
        parts.push(format!(
            "K={k}: gap {worst_gap:.1e}, em iters <= {max_iters}, em {:.2e}s newton {:.2e}s",
            t_em / 20.0,
            t_newton / 20.0
        ));
        if worst_gap > 1e-6 || max_iters > 10 || t_em > t_newton / 5.0 {
            failures.push(k);
        }
    }
    let detail = parts.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(suite: &mut Suite) -> Outcome {
    let ds = suite
        .mnist
        .clone()
        .ok_or("MNIST not found; set MNIST_DIR")?;
    let batch = match &suite.mnist_ours_seed0 {
        Some(r) => r.final_accuracy().unwrap(),
        None => mnist_run(&ds, LossKind::Ours, 0, YUpdateMode::PerBatch)?
            .final_accuracy()
            .unwrap(),
    };
    let epoch_run = mnist_run(&ds, LossKind::Ours, 0, YUpdateMode::PerEpoch)?;
    suite.observe(&epoch_run);
    let epoch = epoch_run.final_accuracy().unwrap();
    let detail = format!(
        "per-batch {:.2}%, per-epoch {:.2}%, gap {:.2} points (need >= 5)",
        100.0 * batch,
        100.0 * epoch,
        100.0 * (batch - epoch)
    );
    if batch - epoch >= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn restarted(ds: &Dataset, loss: LossConfig, epochs: usize, lr: f64, seed: u64) -> TrainResult {
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size: ds.len(),
        seed,
        ..TrainConfig::new(loss)
    };
    train_with_restarts(ds, &cfg, 10, |s| SoftmaxModel::linear(2, 2, s))
        .expect("training")
        .0
}

fn anisotropic_run(seed: u64) -> (Dataset, TrainResult) {
    let ds = gen_anisotropic_pair(seed, 400, 30.0, 8.0).unwrap();
    let r = restarted(&ds, LossConfig::new(LossKind::MiMm, 2), 300, 0.1, seed);
    (ds, r)
}

fn criterion_4(suite: &mut Suite) -> Outcome {
    let mut ent = Vec::new();
    let mut km = Vec::new();
    for seed in 0..10 {
        let (ds, r) = anisotropic_run(seed);
        suite.observe(&r);
        ent.push(r.final_accuracy().unwrap());
        if seed == 0 {
            suite.anisotropic_seed0 = Some((records_text(&r), svg(&r, &ds)));
        }
        let state = kmeans_fit(ds.features.view(), 2, seed, 10).unwrap();
        km.push(
            hungarian_accuracy(&state.assignments, ds.labels.as_ref().unwrap(), 2)
                .unwrap()
                .0,
        );
    }
    let (me, mk) = (median(&ent), median(&km));
    let detail = format!(
        "median mi_mm {:.2}% [{}], median kmeans {:.2}% [{}]",
        100.0 * me,
        pct(&ent),
        100.0 * mk,
        pct(&km)
    );
    if me >= 0.95 && mk <= 0.90 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn margin_run(seed: u64, gamma: f64) -> (Dataset, TrainResult, f64) {
    let ds = gen_margin_gap(seed, 400, 2.0).unwrap();
    let loss = LossConfig {
        gamma,
        ..LossConfig::new(LossKind::MiMm, 2)
    };
    let r = restarted(&ds, loss, 1000, 0.2, seed);
    let margin = geometric_margin(&r.model, ds.features.view()).unwrap();
    (ds, r, margin)
}

fn criterion_5(suite: &mut Suite) -> Outcome {
    let mut without = Vec::new();
    let mut with = Vec::new();
    for seed in 0..10 {
        let (_, r, m0) = margin_run(seed, 0.0);
        suite.observe(&r);
        without.push(m0);
        let (ds, r, m1) = margin_run(seed, 0.01);
        suite.observe(&r);
        with.push(m1);
        if seed == 0 {
            suite.margin_seed0 = Some((records_text(&r), svg(&r, &ds)));
        }
    }
    let (a, b) = (median(&without), median(&with));
    let detail = format!("median margin gamma=0 {a:.4}, gamma=0.01 {b:.4}, ratio {:.1}", b / a);
    if b >= 2.0 * a {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn corruption_run(seed: u64) -> Vec<CorruptionRow> {
    let ds = gen_blobs(seed, 1000, 10, 20, 4.0).unwrap();
    let (train_set, test) = split(&ds, 0.5, seed).unwrap();
    let template = SoftmaxModel::with_hidden(10, 20, 256, seed);
    let cfg = TrainConfig {
        epochs: 500,
        lr: 0.003,
        optimizer: OptimizerKind::Adam,
        batch_size: 25,
        seed,
        ..TrainConfig::new(LossConfig::new(LossKind::Ours, 10))
    };
    corruption_robustness_experiment(&train_set, &test, &[0.0, 0.8], &template, &cfg).unwrap()
}

fn criterion_6(suite: &mut Suite) -> Outcome {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for seed in 0..3 {
        let rows = corruption_run(seed);
        clean.push(rows[0].reverse_ce_accuracy - rows[0].forward_ce_accuracy);
        noisy.push(rows[1].reverse_ce_accuracy - rows[1].forward_ce_accuracy);
        if seed == 0 {
            suite.corruption_seed0 = Some(rows);
        }
    }
    let (gc, gn) = (mean(&clean), mean(&noisy));
    let detail = format!(
        "reverse minus forward: eta=0 {:.2} points [{}], eta=0.8 {:.2} points [{}]",
        100.0 * gc,
        pct(&clean),
        100.0 * gn,
        pct(&noisy)
    );
    if gc.abs() < 0.03 && gn >= 0.10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let checks: Vec<(&str, common::Check)> = vec![
        ("em monotone", common::em_monotone(1000)),
        ("jensen tight", common::jensen_tight(1000)),
        ("convex segments", common::convex_segments(1000)),
        ("m-step row sums", common::m_step_row_sums(1000)),
        ("solver agreement", common::solvers_agree(300)),
        ("gradients", common::gradients_match_finite_differences()),
        ("hungarian", common::hungarian_brute_force(1000)),
        ("simplex", common::simplex_fuzz(10_000)),
        ("beta grid", common::beta_grid_shape()),
    ];
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(name, c)| c.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(format!("{} suites green", checks.len()))
    } else {
        Err(failed.join("; "))
    }
}

fn criterion_8(suite: &mut Suite) -> Outcome {
    let mut compared = Vec::new();
    let mut mismatched = Vec::new();
    let mut check = |name: &str, same: bool| {
        compared.push(name.to_string());
        if !same {
            mismatched.push(name.to_string());
        }
    };
    if let Some((records, image)) = &suite.anisotropic_seed0 {
        let (ds, r) = anisotropic_run(0);
        check("anisotropic records", &records_text(&r) == records);
        check("anisotropic svg", &svg(&r, &ds) == image);
    }
    if let Some((records, image)) = &suite.margin_seed0 {
        let (ds, r, _) = margin_run(0, 0.01);
        check("margin records", &records_text(&r) == records);
        check("margin svg", &svg(&r, &ds) == image);
    }
    if let Some(rows) = &suite.corruption_seed0 {
        check("corruption table", &corruption_run(0) == rows);
    }
    if let (Some(ds), Some(full)) = (&suite.mnist, &suite.mnist_ours_seed0) {
        // The first epochs of a run do not depend on how many epochs follow.
        let cfg = TrainConfig {
            epochs: 5,
            ..mnist_config(LossKind::Ours, 0)
        };
        let short = train(ds, SoftmaxModel::linear(10, ds.dim(), 0), &cfg).unwrap();
        let prefix: String = full.records[..5]
            .iter()
            .map(|r| r.to_json_line() + "\n")
            .collect();
        check("mnist records", records_text(&short) == prefix);
    }
    if compared.is_empty() {
        return Err("no earlier runs to repeat".into());
    }
    let detail = format!("byte-identical: {}", compared.join(", "));
    if mismatched.is_empty() {
        Ok(detail)
    } else {
        Err(format!("differs: {}", mismatched.join(", ")))
    }
}

#[test]
fn acceptance() {
    let mut suite = Suite {
        mnist: load_mnist(&mnist_dir()).ok(),
        ..Suite::default()
    };
    let criteria: Vec<(&str, fn(&mut Suite) -> Outcome)> = vec![
        ("mnist clustering accuracy", criterion_1),
        ("em vs newton solver table", |_| criterion_2()),
        ("per-batch vs per-epoch pseudo-labels", criterion_3),
        ("anisotropic pair counterexample", criterion_4),
        ("margin from the norm term", criterion_5),
        ("reverse vs forward ce under corruption", criterion_6),
        ("property suites", |_| criterion_7()),
        ("determinism", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run(&mut suite);
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(d) => say(&format!("PASS [{}] {name}: {d} ({secs:.0}s)", i + 1)),
            Err(d) => {
                say(&format!("FAIL [{}] {name}: {d} ({secs:.0}s)", i + 1));
                failed.push(i + 1);
            }
        }
    }
    let bounded = suite.max_norm < NORM_BOUND;
    say(&format!(
        "{} norm bound: max classifier norm {:.3} (limit {NORM_BOUND:e})",
        if bounded { "PASS" } else { "FAIL" },
        suite.max_norm
    ));
    assert!(bounded, "classifier norm diverged");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
