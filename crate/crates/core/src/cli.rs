//! Command-line front end: `cluster`, `bench-solvers` and `sweep`.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for runtime failures.
//! Stdout carries only the summary table; everything else is written under the output
//! directory.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::data::{self, Dataset};
use crate::eval::{geometric_margin, hungarian_accuracy};
use crate::kmeans::kmeans_fit;
use crate::losses::LossKind;
use crate::model::{InitScheme, OptimizerKind};
use crate::solvers::{bench_solvers, write_bench_csv, BenchConfig};
use crate::trainer::{
    corruption_robustness_experiment, mean_std, train, train_weakly_supervised,
    train_with_restarts, write_records, TrainResult, YUpdateMode,
};
use crate::viz::{render_accuracy_curve, render_decision_regions, RenderSpec, Series};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "entclust",
    version,
    about = "Entropy-based clustering with self-labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train (or run K-means) across seeds and summarize accuracy.
    Cluster(ExperimentArgs),
    /// Compare the EM, Newton and mirror-descent pseudo-label solvers.
    BenchSolvers(BenchArgs),
    /// One run per value of a parameter grid.
    Sweep(SweepArgs),
}

/// Flags shared by `cluster` and `sweep`; each overrides the config file.
#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// Config file with `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist, csv, gen:anisotropic, gen:margin_gap or gen:blobs.
    #[arg(long)]
    data: Option<String>,
    /// MNIST directory or CSV file.
    #[arg(long)]
    data_path: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Loss name or `kmeans`.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// per_batch or per_epoch.
    #[arg(long)]
    y_update: Option<YUpdateMode>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Hidden-layer width; 0 for a linear model.
    #[arg(long)]
    hidden: Option<usize>,
    /// glorot or fan_in.
    #[arg(long)]
    init: Option<InitScheme>,
    /// Generator sample count.
    #[arg(long)]
    m: Option<usize>,
    /// Generator class count.
    #[arg(long)]
    k: Option<usize>,
    /// Generator dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Blob centre separation.
    #[arg(long)]
    separation: Option<f64>,
    /// Anisotropic-pair elongation.
    #[arg(long)]
    elongation: Option<f64>,
    /// Anisotropic-pair tilt in degrees.
    #[arg(long)]
    tilt: Option<f64>,
    /// Margin-gap width.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    seed_ratio: Option<f64>,
    /// K-means restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Training runs per seed; the lowest final loss wins.
    #[arg(long)]
    train_restarts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip SVG output.
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',', default_value = "2,20,200")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_mirror_descent: bool,
    #[arg(long, default_value = "runs/bench")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// gamma, lambda, beta, eta or ablation.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values (`gamma0,lambda0,full` for ablation).
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// `clustering` (default) or `corruption`.
    #[arg(long, default_value = "clustering")]
    experiment: String,
    #[command(flatten)]
    common: ExperimentArgs,
}

/// Runs the CLI on `args` (including the program name), writing the summary to `stdout`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Cluster(a) => cmd_cluster(&a, stdout),
        Command::BenchSolvers(a) => cmd_bench_solvers(&a, stdout),
        Command::Sweep(a) => cmd_sweep(&a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Config file (or defaults) with flag overrides applied.
fn resolve_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(a.data, cfg.data.source);
    if a.data_path.is_some() {
        cfg.data.path = a.data_path.clone();
    }
    if a.label_column.is_some() {
        cfg.data.label_column = a.label_column.clone();
    }
    set!(a.loss, cfg.loss.kind);
    if a.lambda.is_some() {
        cfg.loss.lambda = a.lambda;
    }
    if a.gamma.is_some() {
        cfg.loss.gamma = a.gamma;
    }
    set!(a.beta, cfg.loss.beta);
    set!(a.lr, cfg.train.lr);
    set!(a.batch, cfg.train.batch_size);
    set!(a.epochs, cfg.train.epochs);
    set!(a.seeds, cfg.train.seeds);
    set!(a.seed, cfg.train.seed);
    set!(a.y_update, cfg.train.y_update_mode);
    set!(a.optimizer, cfg.train.optimizer);
    set!(a.hidden, cfg.model.hidden);
    set!(a.init, cfg.model.init);
    set!(a.m, cfg.data.m);
    set!(a.k, cfg.data.k);
    set!(a.n, cfg.data.n);
    set!(a.separation, cfg.data.separation);
    set!(a.elongation, cfg.data.elongation);
    set!(a.tilt, cfg.data.tilt_degrees);
    set!(a.gap, cfg.data.gap_width);
    set!(a.test_fraction, cfg.data.test_fraction);
    set!(a.data_seed, cfg.data.seed);
    set!(a.seed_ratio, cfg.data.seed_ratio);
    set!(a.restarts, cfg.kmeans.restarts);
    set!(a.train_restarts, cfg.train.restarts);
    set!(a.out, cfg.output.dir);
    if a.no_figures {
        cfg.output.figures = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads or generates the dataset selected by `cfg`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let path = || {
        d.path
            .clone()
            .ok_or_else(|| Error::Config("data.path: required for this source".into()))
    };
    match cfg.data_source()? {
        DataSource::Mnist => data::load_mnist(&path()?),
        DataSource::Csv => data::load_csv_features(&path()?, d.label_column.as_deref()),
        DataSource::Anisotropic => {
            data::gen_anisotropic_pair(d.seed, d.m, d.tilt_degrees, d.elongation)
        }
        DataSource::MarginGap => data::gen_margin_gap(d.seed, d.m, d.gap_width),
        DataSource::Blobs => data::gen_blobs(d.seed, d.m, d.k, d.n, d.separation),
    }
    .map_err(|e| match e {
        Error::InvalidInput(msg) => Error::Config(format!("data: {msg}")),
        other => other,
    })
}

fn num_clusters(cfg: &ExperimentConfig, ds: &Dataset) -> usize {
    match cfg.data_source() {
        Ok(DataSource::Blobs) => cfg.data.k,
        _ => ds.num_classes().unwrap_or(cfg.data.k).max(2),
    }
}

/// Outcome of one seed of a clustering run.
#[derive(Clone, Debug)]
struct SeedOutcome {
    seed: u64,
    accuracy: Option<f64>,
    best: Option<(usize, f64)>,
    margin: Option<f64>,
}

fn write_summary_csv(path: &Path, rows: &[SeedOutcome]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record([
        "seed",
        "final_accuracy",
        "best_epoch",
        "best_accuracy",
        "margin",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            fmt(r.accuracy),
            r.best.map(|b| b.0.to_string()).unwrap_or_default(),
            fmt(r.best.map(|b| b.1)),
            fmt(r.margin),
        ])
        .map_err(csv_err)?;
    }
    let accs: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    if !accs.is_empty() {
        let (mean, std) = mean_std(&accs);
        w.write_record([
            "mean".into(),
            format!("{mean:.6}"),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
        w.write_record([
            "std".into(),
            format!("{std:.6}"),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed of `cfg` on `ds`, writing per-seed artifacts under `out`.
fn run_seeds(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<Vec<SeedOutcome>> {
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.toml"))?;
    let k = num_clusters(cfg, ds);
    let mut outcomes = Vec::new();
    for index in 0..cfg.train.seeds {
        let seed = cfg.run_seed(index);
        let run_dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&run_dir)?;
        let outcome = match cfg.method()? {
            Method::KMeans => {
                let state = kmeans_fit(ds.features.view(), k, seed, cfg.kmeans.restarts)?;
                let accuracy = match &ds.labels {
                    Some(l) => Some(
                        hungarian_accuracy(
                            &state.assignments,
                            l,
                            k.max(ds.num_classes().unwrap_or(0)),
                        )?
                        .0,
                    ),
                    None => None,
                };
                let record = serde_json::json!({
                    "method": "kmeans",
                    "inertia": state.inertia,
                    "iterations": state.iterations,
                    "accuracy": accuracy,
                });
                fs::write(run_dir.join("records.jsonl"), format!("{record}\n"))?;
                SeedOutcome {
                    seed,
                    accuracy,
                    best: None,
                    margin: None,
                }
            }
            Method::Loss(kind) => {
                let mut tc = cfg.train_config(kind, k, index)?;
                if cfg.output.checkpoints {
                    tc.checkpoint_dir = Some(run_dir.clone());
                }
                let (result, shown): (TrainResult, Dataset) = if cfg.data.seed_ratio > 0.0 {
                    let (train_set, test) = data::split(ds, cfg.data.test_fraction, cfg.data.seed)?;
                    let train_set =
                        train_set.with_seed_ratio(cfg.data.seed_ratio, cfg.data.seed)?;
                    let model = cfg.build_model(k, ds.dim(), seed);
                    (
                        train_weakly_supervised(&train_set, &test, model, &tc)?,
                        test,
                    )
                } else if cfg.train.restarts > 1 {
                    // Per-restart checkpoints would overwrite each other; keep the winner only.
                    tc.checkpoint_dir = None;
                    let (result, _) = train_with_restarts(ds, &tc, cfg.train.restarts, |s| {
                        cfg.build_model(k, ds.dim(), s)
                    })?;
                    if cfg.output.checkpoints {
                        result.model.save(&run_dir.join("final.ckpt"))?;
                    }
                    (result, ds.clone())
                } else {
                    let model = cfg.build_model(k, ds.dim(), seed);
                    (train(ds, model, &tc)?, ds.clone())
                };
                let mut records = Vec::new();
                write_records(&result.records, &mut records)?;
                fs::write(run_dir.join("records.jsonl"), records)?;
                let timing: String = std::iter::once("epoch,wall_time_seconds\n".to_string())
                    .chain(
                        result
                            .records
                            .iter()
                            .map(|r| format!("{},{:.6}\n", r.epoch, r.wall_time)),
                    )
                    .collect();
                fs::write(run_dir.join("timing.csv"), timing)?;
                let margin = if result.model.is_linear() && k == 2 {
                    geometric_margin(&result.model, ds.features.view()).ok()
                } else {
                    None
                };
                if cfg.output.figures && ds.dim() == 2 {
                    let svg =
                        render_decision_regions(&result.model, &shown, &RenderSpec::default())?;
                    fs::write(run_dir.join("regions.svg"), svg)?;
                }
                SeedOutcome {
                    seed,
                    accuracy: result.final_accuracy(),
                    best: result.best,
                    margin,
                }
            }
        };
        outcomes.push(outcome);
    }
    write_summary_csv(&out.join("summary.csv"), &outcomes)?;
    let accs: Vec<f64> = outcomes.iter().filter_map(|o| o.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let summary = serde_json::json!({
        "summary": true,
        "method": cfg.loss.kind,
        "seeds": outcomes.len(),
        "mean_accuracy": if accs.is_empty() { None } else { Some(mean) },
        "std_accuracy": if accs.is_empty() { None } else { Some(std) },
    });
    fs::write(out.join("summary.jsonl"), format!("{summary}\n"))?;
    Ok(outcomes)
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x))
        .unwrap_or_else(|| "-".into())
}

fn cmd_cluster(a: &ExperimentArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(a)?;
    let ds = load_dataset(&cfg)?;
    let outcomes = run_seeds(&cfg, &ds, &cfg.output.dir)?;
    writeln!(stdout, "seed\taccuracy(%)\tbest_epoch\tbest(%)")?;
    for o in &outcomes {
        writeln!(
            stdout,
            "{}\t{}\t{}\t{}",
            o.seed,
            pct(o.accuracy),
            o.best
                .map(|b| b.0.to_string())
                .unwrap_or_else(|| "-".into()),
            pct(o.best.map(|b| b.1))
        )?;
    }
    let accs: Vec<f64> = outcomes.iter().filter_map(|o| o.accuracy).collect();
    if !accs.is_empty() {
        let (mean, std) = mean_std(&accs);
        writeln!(stdout, "mean\t{:.2} ({:.2})", 100.0 * mean, 100.0 * std)?;
    }
    Ok(())
}

fn cmd_bench_solvers(a: &BenchArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Config("--trials: must be >= 1".into()));
    }
    if a.k.is_empty() || a.k.iter().any(|&k| k < 2) {
        return Err(Error::Config("--k: every K must be >= 2".into()));
    }
    if a.m == 0 {
        return Err(Error::Config("--m: must be >= 1".into()));
    }
    if !(a.tol > 0.0) {
        return Err(Error::Config("--tol: must be > 0".into()));
    }
    if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
        return Err(Error::Config(
            "--lambda: must be a finite value >= 0".into(),
        ));
    }
    let bench = BenchConfig {
        ks: a.k.clone(),
        m: a.m,
        lambda: a.lambda,
        trials: a.trials,
        tolerance: a.tol,
        seed: a.seed,
        include_mirror_descent: !a.no_mirror_descent,
    };
    let rows = bench_solvers(&bench)?;
    fs::create_dir_all(&a.out)?;
    write_bench_csv(&rows, fs::File::create(a.out.join("bench.csv"))?)?;
    writeln!(
        stdout,
        "solver\tK\tM\titerations\twall_time_s\tfinal_objective"
    )?;
    for r in &rows {
        writeln!(
            stdout,
            "{}\t{}\t{}\t{:.1}\t{:.3e}\t{:.10e}",
            r.solver, r.k, r.m, r.iterations, r.wall_time_seconds, r.final_objective
        )?;
    }
    Ok(())
}

fn parse_values(param: &str, values: &[String]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!(
                    "--values: '{v}' is not a number for --param {param}"
                ))
            })
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write) -> Result<()> {
    let base = resolve_config(&a.common)?;
    let root = base.output.dir.clone();
    match (a.param.as_str(), a.experiment.as_str()) {
        ("eta", "corruption") => {
            sweep_corruption(&base, &parse_values("eta", &a.values)?, &root, stdout)
        }
        ("eta", _) => Err(Error::Config(
            "--param eta needs --experiment corruption".into(),
        )),
        (_, "corruption") => Err(Error::Config(
            "--experiment corruption sweeps --param eta".into(),
        )),
        ("ablation", _) => {
            let mut points = Vec::new();
            for v in &a.values {
                let mut cfg = base.clone();
                match v.as_str() {
                    "gamma0" => cfg.loss.gamma = Some(0.0),
                    "lambda0" => cfg.loss.lambda = Some(0.0),
                    "full" => {}
                    other => {
                        return Err(Error::Config(format!(
                            "--values: unknown ablation '{other}' (expected gamma0, lambda0, full)"
                        )))
                    }
                }
                points.push((v.clone(), cfg));
            }
            sweep_points(points, &root, stdout)
        }
        (param @ ("gamma" | "lambda" | "beta"), _) => {
            let mut points = Vec::new();
            for v in parse_values(param, &a.values)? {
                let mut cfg = base.clone();
                match param {
                    "gamma" => cfg.loss.gamma = Some(v),
                    "lambda" => cfg.loss.lambda = Some(v),
                    _ => cfg.loss.beta = v,
                }
                cfg.validate()?;
                points.push((format!("{param}={v}"), cfg));
            }
            sweep_points(points, &root, stdout)
        }
        (other, _) => Err(Error::Config(format!(
            "--param: unknown parameter '{other}' (expected gamma, lambda, beta, eta or ablation)"
        ))),
    }
}

fn sweep_points(
    points: Vec<(String, ExperimentConfig)>,
    root: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut rows = Vec::new();
    for (label, mut cfg) in points {
        let dir = root.join(label.replace('=', "_"));
        cfg.output.dir = dir.clone();
        let ds = load_dataset(&cfg)?;
        let outcomes = run_seeds(&cfg, &ds, &dir)?;
        let accs: Vec<f64> = outcomes.iter().filter_map(|o| o.accuracy).collect();
        let margins: Vec<f64> = outcomes.iter().filter_map(|o| o.margin).collect();
        rows.push((
            label,
            mean_std(&accs),
            (!margins.is_empty()).then(|| mean_std(&margins).0),
        ));
    }
    let mut csv = String::from("point,mean_accuracy,std_accuracy,mean_margin\n");
    writeln!(stdout, "point\taccuracy(%)\tstd\tmargin")?;
    for (label, (mean, std), margin) in &rows {
        let m = margin.map(|v| format!("{v:.6}")).unwrap_or_default();
        csv.push_str(&format!("{label},{mean:.6},{std:.6},{m}\n"));
        writeln!(
            stdout,
            "{label}\t{:.2}\t{:.2}\t{}",
            100.0 * mean,
            100.0 * std,
            margin
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into())
        )?;
    }
    fs::write(root.join("sweep.csv"), csv)?;
    Ok(())
}

fn sweep_corruption(
    base: &ExperimentConfig,
    etas: &[f64],
    root: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    if etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Config(
            "--values: every eta must lie in [0, 1]".into(),
        ));
    }
    let kind = match base.method()? {
        Method::Loss(kind) => kind,
        Method::KMeans => LossKind::Ours,
    };
    let ds = load_dataset(base)?;
    let k = num_clusters(base, &ds);
    let (train_set, test) = data::split(&ds, base.data.test_fraction, base.data.seed)?;
    fs::create_dir_all(root)?;
    base.save(&root.join("config.toml"))?;
    let tc = base.train_config(kind, k, 0)?;
    let template = base.build_model(k, ds.dim(), tc.seed);
    let rows = corruption_robustness_experiment(&train_set, &test, etas, &template, &tc)?;
    let mut csv = String::from("eta,forward_ce_accuracy,reverse_ce_accuracy\n");
    writeln!(stdout, "eta\tforward_ce(%)\treverse_ce(%)")?;
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.eta, r.forward_ce_accuracy, r.reverse_ce_accuracy
        ));
        writeln!(
            stdout,
            "{}\t{:.2}\t{:.2}",
            r.eta,
            100.0 * r.forward_ce_accuracy,
            100.0 * r.reverse_ce_accuracy
        )?;
    }
    fs::write(root.join("corruption.csv"), csv)?;
    if base.output.figures {
        let series = vec![
            Series {
                label: "forward CE".into(),
                points: rows
                    .iter()
                    .map(|r| (r.eta, r.forward_ce_accuracy))
                    .collect(),
            },
            Series {
                label: "reverse CE".into(),
                points: rows
                    .iter()
                    .map(|r| (r.eta, r.reverse_ce_accuracy))
                    .collect(),
            },
        ];
        fs::write(
            root.join("corruption.svg"),
            render_accuracy_curve(&series, "eta", "test accuracy")?,
        )?;
    }
    Ok(())
}
