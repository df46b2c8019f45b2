//! Training loops: self-labeling with per-batch or per-epoch pseudo-label solves, plain
//! gradient training for the MI losses, weak supervision and the label-corruption study.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{corrupt_labels, CorruptionSpec, Dataset};
use crate::eval::{argmax_rows, balance_entropy, hungarian_accuracy, raw_accuracy};
use crate::losses::{
    add_regularizer_gradient, add_seeded_gradients, evaluate, logit_gradients, seeded_loss_batch,
    LossBreakdown, LossConfig, LossKind,
};
use crate::model::{Optimizer, OptimizerKind, SoftmaxModel};
use crate::solvers::{
    batch_em_update, solve_mirror_descent, EmConfig, MirrorDescentConfig, MirrorObjective,
};
use crate::{Error, Result};

/// Iteration cap for the pseudo-label solve inside one training iteration.
pub const DEFAULT_TRAINING_EM_ITERATIONS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YUpdateMode {
    #[default]
    PerBatch,
    PerEpoch,
}

impl fmt::Display for YUpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YUpdateMode::PerBatch => "per_batch",
            YUpdateMode::PerEpoch => "per_epoch",
        })
    }
}

impl FromStr for YUpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_batch" => Ok(YUpdateMode::PerBatch),
            "per_epoch" => Ok(YUpdateMode::PerEpoch),
            other => Err(Error::invalid(format!("unknown y update mode '{other}'"))),
        }
    }
}

/// Training hyperparameters. The pseudo-label solver takes `λ`, `β` and the prior from
/// `loss`; only the tolerance and iteration cap of `em` are used.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub em: EmConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub y_update_mode: YUpdateMode,
    pub shuffle: bool,
    pub optimizer: OptimizerKind,
    /// Where `best.ckpt`, `final.ckpt` and `last_good.ckpt` go; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// lr 0.07, batch 250, 50 epochs, plain SGD, per-batch pseudo-labels with at most
    /// 15 EM iterations at tolerance 1e-5.
    pub fn new(loss: LossConfig) -> Self {
        let k = loss.num_classes();
        TrainConfig {
            em: EmConfig {
                max_iterations: DEFAULT_TRAINING_EM_ITERATIONS,
                record_trace: false,
                ..EmConfig::new(k)
            },
            loss,
            lr: 0.07,
            epochs: 50,
            batch_size: 250,
            seed: 0,
            y_update_mode: YUpdateMode::PerBatch,
            shuffle: true,
            optimizer: OptimizerKind::Sgd,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.solver_config().validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    /// The solver configuration actually used during training.
    pub fn solver_config(&self) -> EmConfig {
        EmConfig {
            lambda: self.loss.lambda,
            beta: self.loss.beta,
            prior: self.loss.prior.clone(),
            ..self.em.clone()
        }
    }
}

/// Per-epoch training log. Loss terms are means over the epoch's batches, measured before
/// each update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// Accuracy on the training data at the end of the epoch, when labels exist.
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub cluster_balance_entropy: f64,
    pub em_iterations_mean: f64,
    pub classifier_norm: f64,
    /// Seconds spent in the epoch. Kept out of the serialized record so logs are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub fn write_records<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn read_records(text: &str) -> Result<Vec<RunRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse("run records", format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: SoftmaxModel,
    pub records: Vec<RunRecord>,
    /// `(epoch, accuracy)` of the most accurate epoch, when accuracy is measured.
    pub best: Option<(usize, f64)>,
}

impl TrainResult {
    /// Accuracy after the last epoch: test accuracy if measured, else training accuracy.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records
            .last()
            .and_then(|r| r.test_accuracy.or(r.train_accuracy))
    }
}

/// Mean and sample standard deviation (`n − 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Optional ingredients of a training run beyond the unsupervised loss.
#[derive(Default)]
struct Extras<'a> {
    /// Fixed per-example targets used in place of solved pseudo-labels.
    targets: Option<ArrayView2<'a, f64>>,
    seed_labels: Option<Vec<Option<usize>>>,
    /// Drop the unsupervised loss; only the seeded cross-entropy (and regularizer) remain.
    seeds_only: bool,
    test: Option<&'a Dataset>,
    /// Score by raw argmax instead of Hungarian matching.
    anchored: bool,
}

fn accuracy(pred: &[usize], truth: &[usize], k: usize, anchored: bool) -> Result<f64> {
    if anchored {
        raw_accuracy(pred, truth)
    } else {
        let k = k.max(truth.iter().max().map_or(0, |&m| m + 1));
        Ok(hungarian_accuracy(pred, truth, k)?.0)
    }
}

fn check_compatible(dataset: &Dataset, model: &SoftmaxModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if dataset.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: dataset.dim(),
        });
    }
    if model.num_classes() != cfg.loss.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            found: cfg.loss.num_classes(),
        });
    }
    if cfg.batch_size > dataset.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            dataset.len()
        )));
    }
    Ok(())
}

/// Pseudo-labels with zeros lifted to the log floor, so the reported cross-entropy is the one
/// the gradient optimizes.
fn floored(y: Array2<f64>, floor: f64) -> Array2<f64> {
    if y.iter().any(|&v| v < floor) {
        y.mapv(|v| v.max(floor))
    } else {
        y
    }
}

fn solve_full_pseudo_labels(
    model: &SoftmaxModel,
    x: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(Array2<f64>, usize)> {
    let sigma = model.predict_proba(x)?;
    let em = cfg.solver_config();
    let state = match cfg.loss.kind {
        LossKind::MiAdm => {
            let md = MirrorDescentConfig {
                objective: MirrorObjective::MiAdm,
                max_iterations: em.max_iterations,
                ..MirrorDescentConfig::default()
            };
            solve_mirror_descent(sigma.view(), &em, &md)?
        }
        _ => batch_em_update(sigma.view(), &em, None)?,
    };
    Ok((state.y, state.iterations))
}

fn checkpoint_path(cfg: &TrainConfig, name: &str) -> Option<PathBuf> {
    cfg.checkpoint_dir.as_ref().map(|d| d.join(name))
}

fn run(
    dataset: &Dataset,
    mut model: SoftmaxModel,
    cfg: &TrainConfig,
    extras: Extras<'_>,
) -> Result<TrainResult> {
    check_compatible(dataset, &model, cfg)?;
    if let Some(t) = extras.targets {
        if t.dim() != (dataset.len(), model.num_classes()) {
            return Err(Error::invalid(
                "target matrix does not match dataset and model",
            ));
        }
    }
    if let Some(test) = extras.test {
        if test.dim() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                found: test.dim(),
            });
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let x = dataset.features.view();
    let m = dataset.len();
    let k = model.num_classes();
    let em = cfg.solver_config();
    let kind = cfg.loss.kind;
    let needs_pseudo = kind.uses_pseudo_labels() && extras.targets.is_none() && !extras.seeds_only;
    let frozen_y =
        needs_pseudo && (kind == LossKind::MiAdm || cfg.y_update_mode == YUpdateMode::PerEpoch);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut last_good: Option<PathBuf> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut em_iterations = Vec::new();
        let epoch_y = if frozen_y {
            let (y, iters) = solve_full_pseudo_labels(&model, x, cfg)?;
            em_iterations.push(iters as f64);
            Some(y)
        } else {
            None
        };
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let fwd = model.forward_batch(xb.view())?;
            let probs = fwd.probs.view();
            let pseudo: Option<Array2<f64>> = if let Some(t) = extras.targets {
                Some(t.select(Axis(0), batch))
            } else if let Some(y) = &epoch_y {
                Some(y.select(Axis(0), batch))
            } else if needs_pseudo {
                let state = batch_em_update(probs, &em, None)?;
                em_iterations.push(state.iterations as f64);
                Some(state.y)
            } else {
                None
            };
            let pseudo = pseudo.map(|y| {
                if kind == LossKind::Ours {
                    floored(y, cfg.loss.log_floor)
                } else {
                    y
                }
            });
            let (mut breakdown, mut grad) = if extras.seeds_only {
                let reg = evaluate(
                    probs,
                    pseudo.as_ref().map(|y| y.view()),
                    Some(&model),
                    &cfg.loss,
                )
                .map(|b| b.regularizer)
                .unwrap_or(0.0);
                (
                    LossBreakdown {
                        regularizer: reg,
                        total: reg,
                        ..LossBreakdown::default()
                    },
                    Array2::zeros(probs.dim()),
                )
            } else {
                let pv = pseudo.as_ref().map(|y| y.view());
                (
                    evaluate(probs, pv, Some(&model), &cfg.loss)?,
                    logit_gradients(probs, pv, &cfg.loss)?,
                )
            };
            if let Some(seeds) = &extras.seed_labels {
                let labels: Vec<Option<usize>> = batch.iter().map(|&i| seeds[i]).collect();
                breakdown = seeded_loss_batch(probs, &labels, breakdown)?;
                add_seeded_gradients(&mut grad, probs, &labels)?;
            }
            if !breakdown.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    checkpoint: last_good,
                });
            }
            let mut grads = model.backward_batch(xb.view(), &fwd, grad.view())?;
            add_regularizer_gradient(&mut grads, &model, &cfg.loss);
            if grads.check_finite().is_err() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    checkpoint: last_good,
                });
            }
            optimizer.step(&mut model, &grads)?;
            accumulate(&mut sum, &breakdown);
            batches += 1;
        }
        if model.check_finite().is_err() {
            return Err(Error::TrainingDiverged {
                epoch,
                checkpoint: last_good,
            });
        }
        let scale = 1.0 / batches as f64;
        let mean_loss = LossBreakdown {
            decisiveness: sum.decisiveness * scale,
            fairness: sum.fairness * scale,
            regularizer: sum.regularizer * scale,
            consistency: sum.consistency * scale,
            supervised: sum.supervised * scale,
            total: sum.total * scale,
        };

        let preds = argmax_rows(model.predict_proba(x)?.view());
        let train_accuracy = match &dataset.labels {
            Some(labels) => Some(accuracy(&preds, labels, k, extras.anchored)?),
            None => None,
        };
        let test_accuracy = match extras.test {
            Some(test) => {
                let tp = argmax_rows(model.predict_proba(test.features.view())?.view());
                Some(accuracy(&tp, test.labels_or_err()?, k, extras.anchored)?)
            }
            None => None,
        };
        let record = RunRecord {
            epoch,
            loss: mean_loss,
            train_accuracy,
            test_accuracy,
            cluster_balance_entropy: balance_entropy(&preds, k)?,
            em_iterations_mean: if em_iterations.is_empty() {
                0.0
            } else {
                em_iterations.iter().sum::<f64>() / em_iterations.len() as f64
            },
            classifier_norm: model.classifier_norm_sq().sqrt(),
            wall_time: started.elapsed().as_secs_f64(),
        };
        if let Some(acc) = test_accuracy.or(train_accuracy) {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((epoch, acc));
                if let Some(p) = checkpoint_path(cfg, "best.ckpt") {
                    model.save(&p)?;
                }
            }
        }
        if let Some(p) = checkpoint_path(cfg, "last_good.ckpt") {
            model.save(&p)?;
            last_good = Some(p);
        }
        records.push(record);
    }
    if let Some(p) = checkpoint_path(cfg, "final.ckpt") {
        model.save(&p)?;
    }
    Ok(TrainResult {
        model,
        records,
        best,
    })
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.decisiveness += b.decisiveness;
    sum.fairness += b.fairness;
    sum.regularizer += b.regularizer;
    sum.consistency += b.consistency;
    sum.supervised += b.supervised;
    sum.total += b.total;
}

/// Unsupervised training. For `ours`, each iteration solves the batch pseudo-labels from a
/// warm start at the current predictions (or reads them from the per-epoch solve), then
/// takes one optimizer step. Other losses are trained by gradient descent on the loss itself;
/// `mi_adm` refreshes its pseudo-labels once per epoch by mirror descent.
pub fn train(dataset: &Dataset, model: SoftmaxModel, cfg: &TrainConfig) -> Result<TrainResult> {
    run(dataset, model, cfg, Extras::default())
}

/// Seed of restart `r` for base seed `seed`; restart 0 keeps the base seed.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64) << 32)
}

/// Best of `restarts` independent [`train`] runs by final training loss. Restart `r` builds its
/// model with `build(restart_seed(cfg.seed, r))` and shuffles with the same seed. Labels play no
/// part in the choice. Returns the winning result and its restart index.
pub fn train_with_restarts(
    dataset: &Dataset,
    cfg: &TrainConfig,
    restarts: usize,
    build: impl Fn(u64) -> SoftmaxModel,
) -> Result<(TrainResult, usize)> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    let mut best: Option<(TrainResult, usize)> = None;
    for r in 0..restarts {
        let seed = restart_seed(cfg.seed, r);
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let result = train(dataset, build(seed), &run_cfg)?;
        let loss = final_loss(&result);
        if best.as_ref().is_none_or(|(b, _)| loss < final_loss(b)) {
            best = Some((result, r));
        }
    }
    Ok(best.expect("at least one restart"))
}

fn final_loss(result: &TrainResult) -> f64 {
    result
        .records
        .last()
        .map_or(f64::INFINITY, |r| r.loss.total)
}

/// [`train`] with pseudo-labels solved once per epoch over the full dataset.
pub fn train_epoch_mode(
    dataset: &Dataset,
    model: SoftmaxModel,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let cfg = TrainConfig {
        y_update_mode: YUpdateMode::PerEpoch,
        ..cfg.clone()
    };
    run(dataset, model, &cfg, Extras::default())
}

/// Adds cross-entropy on the examples marked in `train.seed_mask`. Accuracy is raw argmax on
/// `test`, since seeds fix the class identities.
pub fn train_weakly_supervised(
    train_set: &Dataset,
    test: &Dataset,
    model: SoftmaxModel,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    weak(train_set, test, model, cfg, false)
}

/// Baseline that trains only on the seeded cross-entropy (plus the loss's norm term).
pub fn train_seeds_only(
    train_set: &Dataset,
    test: &Dataset,
    model: SoftmaxModel,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    weak(train_set, test, model, cfg, true)
}

fn weak(
    train_set: &Dataset,
    test: &Dataset,
    model: SoftmaxModel,
    cfg: &TrainConfig,
    seeds_only: bool,
) -> Result<TrainResult> {
    if train_set.seed_mask.is_none() {
        return Err(Error::invalid("weak supervision needs a seed mask"));
    }
    test.labels_or_err()?;
    let seeds = train_set.seed_labels();
    if seeds_only && seeds.iter().all(|s| s.is_none()) {
        return Err(Error::invalid(
            "seeds-only training needs at least one seed",
        ));
    }
    run(
        train_set,
        model,
        cfg,
        Extras {
            seed_labels: Some(seeds),
            seeds_only,
            test: Some(test),
            anchored: true,
            ..Extras::default()
        },
    )
}

/// Trains against fixed soft targets. `reverse` selects `H(σ, ỹ)`, otherwise `H(ỹ, σ)`.
/// Accuracy on `test` is raw argmax.
pub fn train_on_targets(
    train_set: &Dataset,
    targets: ArrayView2<'_, f64>,
    test: &Dataset,
    model: SoftmaxModel,
    cfg: &TrainConfig,
    reverse: bool,
) -> Result<TrainResult> {
    let k = model.num_classes();
    let loss = LossConfig {
        lambda: 0.0,
        gamma: 0.0,
        beta: 1.0,
        ..LossConfig::new(
            if reverse {
                LossKind::Ours
            } else {
                LossKind::MiAdm
            },
            k,
        )
    };
    let cfg = TrainConfig {
        loss,
        ..cfg.clone()
    };
    run(
        train_set,
        model,
        &cfg,
        Extras {
            targets: Some(targets),
            test: Some(test),
            anchored: true,
            ..Extras::default()
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub eta: f64,
    pub forward_ce_accuracy: f64,
    pub reverse_ce_accuracy: f64,
}

/// For each `η`: corrupt the training labels, build `ỹ = η u + (1 − η) onehot`, and train a
/// copy of `template` once with forward and once with reverse cross-entropy. Labels are
/// corrupted with `cfg.seed` as the RNG seed.
pub fn corruption_robustness_experiment(
    train_set: &Dataset,
    test: &Dataset,
    etas: &[f64],
    template: &SoftmaxModel,
    cfg: &TrainConfig,
) -> Result<Vec<CorruptionRow>> {
    let k = template.num_classes();
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let spec = CorruptionSpec::new(eta, cfg.seed)?;
        let (_, soft) = corrupt_labels(train_set, spec, k)?;
        let forward = train_on_targets(train_set, soft.view(), test, template.clone(), cfg, false)?;
        let reverse = train_on_targets(train_set, soft.view(), test, template.clone(), cfg, true)?;
        rows.push(CorruptionRow {
            eta,
            forward_ce_accuracy: forward.final_accuracy().unwrap_or(f64::NAN),
            reverse_ce_accuracy: reverse.final_accuracy().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Reads a checkpoint written by a training run.
pub fn load_checkpoint(path: &Path) -> Result<SoftmaxModel> {
    SoftmaxModel::load(path)
}
