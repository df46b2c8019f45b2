//! C ABI over `entclust`.
//!
//! Conventions:
//! - Every fallible function returns an [`EntclustStatus`]; results go through out-pointers.
//! - On failure, [`entclust_last_error_message`] describes the error for the calling thread.
//! - Handles ([`EntclustModel`], [`EntclustDataset`]) are created by `*_new`/`*_load`/`*_from_*`
//!   functions and released with the matching `*_free`; freeing NULL is a no-op.
//! - Arrays are row-major `double` buffers with explicit lengths. Output buffers are
//!   caller-allocated; a too-small buffer yields `ENTCLUST_STATUS_BUFFER_TOO_SMALL`.
//! - Panics never cross the boundary; they are reported as `ENTCLUST_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use entclust::data::{self, Dataset};
use entclust::eval::hungarian_accuracy;
use entclust::kmeans::kmeans_fit;
use entclust::losses::{LossConfig, LossKind};
use entclust::model::SoftmaxModel;
use entclust::solvers::{solve_em, EmConfig};
use entclust::trainer::{train, TrainConfig, YUpdateMode};
use entclust::Error;
use ndarray::ArrayView2;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntclustStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    BufferTooSmall = 4,
    EmptyInput = 5,
    DegenerateCluster = 6,
    NonFinite = 7,
    InfiniteLoss = 8,
    Divergence = 9,
    TrainingDiverged = 10,
    Parse = 11,
    Config = 12,
    Io = 13,
    Panic = 14,
}

/// Loss selector for [`EntclustTrainParams`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntclustLoss {
    Mi = 0,
    MiDecay = 1,
    MiMm = 2,
    MiPp = 3,
    Ours = 4,
    MiAdm = 5,
}

impl From<EntclustLoss> for LossKind {
    fn from(l: EntclustLoss) -> Self {
        match l {
            EntclustLoss::Mi => LossKind::Mi,
            EntclustLoss::MiDecay => LossKind::MiDecay,
            EntclustLoss::MiMm => LossKind::MiMm,
            EntclustLoss::MiPp => LossKind::MiPp,
            EntclustLoss::Ours => LossKind::Ours,
            EntclustLoss::MiAdm => LossKind::MiAdm,
        }
    }
}

/// Training hyperparameters. Fill with [`entclust_train_params_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntclustTrainParams {
    pub loss: EntclustLoss,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Solve pseudo-labels once per epoch instead of per batch.
    pub per_epoch: bool,
    pub shuffle: bool,
    pub em_tolerance: f64,
    pub em_max_iterations: usize,
}

/// Opaque softmax model handle.
pub struct EntclustModel(SoftmaxModel);

/// Opaque dataset handle.
pub struct EntclustDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: EntclustStatus,
    message: String,
}

impl Failure {
    fn new(status: EntclustStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => EntclustStatus::InvalidArgument,
            Error::DimensionMismatch { .. } => EntclustStatus::DimensionMismatch,
            Error::Empty(_) => EntclustStatus::EmptyInput,
            Error::DegenerateCluster { .. } => EntclustStatus::DegenerateCluster,
            Error::NonFinite(_) => EntclustStatus::NonFinite,
            Error::InfiniteLoss(_) => EntclustStatus::InfiniteLoss,
            Error::Divergence(_) => EntclustStatus::Divergence,
            Error::TrainingDiverged { .. } => EntclustStatus::TrainingDiverged,
            Error::Parse { .. } => EntclustStatus::Parse,
            Error::Config(_) => EntclustStatus::Config,
            Error::Io(_) => EntclustStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> EntclustStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EntclustStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            EntclustStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(EntclustStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, len: usize, needed: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len < needed {
        return Err(Failure::new(
            EntclustStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> FfiResult<()> {
    if ptr.is_null() {
        return Err(null(what));
    }
    *ptr = value;
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn string(ptr: *const c_char, what: &str) -> FfiResult<String> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(EntclustStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn matrix<'a>(ptr: *const f64, rows: usize, cols: usize, what: &str) -> FfiResult<ArrayView2<'a, f64>> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::new(EntclustStatus::InvalidArgument, format!("{what} is too large")))?;
    let data = input(ptr, len, what)?;
    ArrayView2::from_shape((rows, cols), data)
        .map_err(|e| Failure::new(EntclustStatus::InvalidArgument, format!("{what}: {e}")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn entclust_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a successful call.
/// The pointer stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn entclust_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code, e.g. `"ok"` or `"dimension_mismatch"`.
#[no_mangle]
pub extern "C" fn entclust_status_name(status: EntclustStatus) -> *const c_char {
    let s: &'static str = match status {
        EntclustStatus::Ok => "ok\0",
        EntclustStatus::NullPointer => "null_pointer\0",
        EntclustStatus::InvalidArgument => "invalid_argument\0",
        EntclustStatus::DimensionMismatch => "dimension_mismatch\0",
        EntclustStatus::BufferTooSmall => "buffer_too_small\0",
        EntclustStatus::EmptyInput => "empty_input\0",
        EntclustStatus::DegenerateCluster => "degenerate_cluster\0",
        EntclustStatus::NonFinite => "non_finite\0",
        EntclustStatus::InfiniteLoss => "infinite_loss\0",
        EntclustStatus::Divergence => "divergence\0",
        EntclustStatus::TrainingDiverged => "training_diverged\0",
        EntclustStatus::Parse => "parse\0",
        EntclustStatus::Config => "config\0",
        EntclustStatus::Io => "io\0",
        EntclustStatus::Panic => "panic\0",
    };
    s.as_ptr().cast()
}

// Datasets.

/// Copies a row-major `rows × cols` feature matrix and optional labels (`rows` entries, may be
/// NULL) into a new dataset.
///
/// # Safety
/// `features` must point to `rows * cols` doubles and `labels`, when non-NULL, to `rows`
/// values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_from_arrays(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    out: *mut *mut EntclustDataset,
) -> EntclustStatus {
    guard(|| {
        let x = matrix(features, rows, cols, "features")?.to_owned();
        let y = if labels.is_null() {
            None
        } else {
            Some(input(labels, rows, "labels")?.to_vec())
        };
        let ds = Dataset::new(x, y, "ffi")?;
        write(out, boxed(EntclustDataset(ds)), "out")
    })
}

/// Loads a CSV file with a header row. `label_column` may be NULL for unlabeled data.
///
/// # Safety
/// `path` and `label_column` must be NUL-terminated strings (or NULL for `label_column`).
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    out: *mut *mut EntclustDataset,
) -> EntclustStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        let label = if label_column.is_null() {
            None
        } else {
            Some(string(label_column, "label_column")?)
        };
        let ds = data::load_csv_features(&path, label.as_deref())?;
        write(out, boxed(EntclustDataset(ds)), "out")
    })
}

/// Loads the four MNIST IDX files from `dir` (70,000 × 784, pixels scaled to [−1, 1]).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_load_mnist(
    dir: *const c_char,
    out: *mut *mut EntclustDataset,
) -> EntclustStatus {
    guard(|| {
        let ds = data::load_mnist(&PathBuf::from(string(dir, "dir")?))?;
        write(out, boxed(EntclustDataset(ds)), "out")
    })
}

/// Generates `m` points in `k` Gaussian blobs in `n` dimensions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_generate_blobs(
    seed: u64,
    m: usize,
    k: usize,
    n: usize,
    separation: f64,
    out: *mut *mut EntclustDataset,
) -> EntclustStatus {
    guard(|| {
        let ds = data::gen_blobs(seed, m, k, n, separation)?;
        write(out, boxed(EntclustDataset(ds)), "out")
    })
}

/// Writes the number of rows and columns of `dataset`.
///
/// # Safety
/// `dataset` must be a live handle; `rows` and `cols` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_shape(
    dataset: *const EntclustDataset,
    rows: *mut usize,
    cols: *mut usize,
) -> EntclustStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        write(rows, ds.len(), "rows")?;
        write(cols, ds.dim(), "cols")
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn entclust_dataset_free(dataset: *mut EntclustDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// Models.

/// Linear softmax model with `k` classes over `n` inputs, seeded initialization.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_new_linear(
    k: usize,
    n: usize,
    seed: u64,
    out: *mut *mut EntclustModel,
) -> EntclustStatus {
    guard(|| {
        if k < 2 || n == 0 {
            return Err(Failure::new(EntclustStatus::InvalidArgument, "need k >= 2 and n >= 1"));
        }
        write(out, boxed(EntclustModel(SoftmaxModel::linear(k, n, seed))), "out")
    })
}

/// Softmax model with one ReLU hidden layer of `width` units.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_new_hidden(
    k: usize,
    n: usize,
    width: usize,
    seed: u64,
    out: *mut *mut EntclustModel,
) -> EntclustStatus {
    guard(|| {
        if k < 2 || n == 0 || width == 0 {
            return Err(Failure::new(
                EntclustStatus::InvalidArgument,
                "need k >= 2, n >= 1 and width >= 1",
            ));
        }
        let model = SoftmaxModel::with_hidden(k, n, width, seed);
        write(out, boxed(EntclustModel(model)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_load(
    path: *const c_char,
    out: *mut *mut EntclustModel,
) -> EntclustStatus {
    guard(|| {
        let model = SoftmaxModel::load(&PathBuf::from(string(path, "path")?))?;
        write(out, boxed(EntclustModel(model)), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_save(
    model: *const EntclustModel,
    path: *const c_char,
) -> EntclustStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        model.save(&PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Writes the class count `K` and input dimension `N`.
///
/// # Safety
/// `model` must be a live handle; `k` and `n` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_shape(
    model: *const EntclustModel,
    k: *mut usize,
    n: *mut usize,
) -> EntclustStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        write(k, model.num_classes(), "k")?;
        write(n, model.input_dim(), "n")
    })
}

/// Class probabilities for `rows` inputs of dimension `cols`, written row-major into `out`
/// (`rows * K` values).
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_predict_proba(
    model: *const EntclustModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> EntclustStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let probs = model.predict_proba(matrix(x, rows, cols, "x")?)?;
        let dst = output(out, out_len, probs.len(), "out")?;
        dst.iter_mut().zip(probs.iter()).for_each(|(d, &p)| *d = p);
        Ok(())
    })
}

/// Predicted cluster (argmax) for each of `rows` inputs.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_predict(
    model: *const EntclustModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut usize,
    out_len: usize,
) -> EntclustStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let labels = model.predict(matrix(x, rows, cols, "x")?)?;
        output(out, out_len, labels.len(), "out")?.copy_from_slice(&labels);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn entclust_model_free(model: *mut EntclustModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// Training.

/// Defaults for `loss` with `k` clusters: lr 0.07, batch 250, 50 epochs, per-batch
/// pseudo-labels, shuffled batches, and the loss's default λ, γ and β.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_train_params_default(
    loss: EntclustLoss,
    k: usize,
    out: *mut EntclustTrainParams,
) -> EntclustStatus {
    guard(|| {
        if k < 2 {
            return Err(Failure::new(EntclustStatus::InvalidArgument, "need k >= 2"));
        }
        let cfg = TrainConfig::new(LossConfig::new(loss.into(), k));
        let params = EntclustTrainParams {
            loss,
            lambda: cfg.loss.lambda,
            gamma: cfg.loss.gamma,
            beta: cfg.loss.beta,
            lr: cfg.lr,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            per_epoch: cfg.y_update_mode == YUpdateMode::PerEpoch,
            shuffle: cfg.shuffle,
            em_tolerance: cfg.em.tolerance,
            em_max_iterations: cfg.em.max_iterations,
        };
        write(out, params, "out")
    })
}

/// Trains a copy of `model` on `dataset` and returns it in `out_model`. When the dataset is
/// labeled, the final Hungarian accuracy goes to `out_accuracy` (NaN otherwise); pass NULL to
/// skip it.
///
/// # Safety
/// `dataset` and `model` must be live handles; `params` and `out_model` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn entclust_train(
    dataset: *const EntclustDataset,
    model: *const EntclustModel,
    params: *const EntclustTrainParams,
    out_model: *mut *mut EntclustModel,
    out_accuracy: *mut f64,
) -> EntclustStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let model = handle(model, "model")?.0.clone();
        let p = *handle(params, "params")?;
        if out_model.is_null() {
            return Err(null("out_model"));
        }
        let mut loss = LossConfig::new(p.loss.into(), model.num_classes());
        loss.lambda = p.lambda;
        loss.gamma = p.gamma;
        loss.beta = p.beta;
        let mut cfg = TrainConfig::new(loss);
        cfg.lr = p.lr;
        cfg.epochs = p.epochs;
        cfg.batch_size = p.batch_size;
        cfg.seed = p.seed;
        cfg.shuffle = p.shuffle;
        cfg.y_update_mode = if p.per_epoch {
            YUpdateMode::PerEpoch
        } else {
            YUpdateMode::PerBatch
        };
        cfg.em.tolerance = p.em_tolerance;
        cfg.em.max_iterations = p.em_max_iterations;
        let result = train(ds, model, &cfg)?;
        if !out_accuracy.is_null() {
            *out_accuracy = result.final_accuracy().unwrap_or(f64::NAN);
        }
        *out_model = boxed(EntclustModel(result.model));
        Ok(())
    })
}

// Solvers and evaluation.

/// Pseudo-labels for predictions `sigma` (`rows × k`, rows on the simplex) under a uniform
/// prior, by EM from a warm start at `sigma`. Writes `y` row-major into `y_out` and the number
/// of iterations run into `iterations` (may be NULL).
///
/// # Safety
/// `sigma` must hold `rows * k` doubles and `y_out` `y_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn entclust_solve_em(
    sigma: *const f64,
    rows: usize,
    k: usize,
    lambda: f64,
    tolerance: f64,
    max_iterations: usize,
    y_out: *mut f64,
    y_len: usize,
    iterations: *mut usize,
) -> EntclustStatus {
    guard(|| {
        if k < 2 {
            return Err(Failure::new(EntclustStatus::InvalidArgument, "need k >= 2"));
        }
        let sigma = matrix(sigma, rows, k, "sigma")?;
        let cfg = EmConfig {
            lambda,
            tolerance,
            max_iterations,
            record_trace: false,
            ..EmConfig::new(k)
        };
        let state = solve_em(sigma, &cfg, None)?;
        let dst = output(y_out, y_len, state.y.len(), "y_out")?;
        dst.iter_mut().zip(state.y.iter()).for_each(|(d, &v)| *d = v);
        if !iterations.is_null() {
            *iterations = state.iterations;
        }
        Ok(())
    })
}

/// Clustering accuracy of `pred` against `truth` (both `m` entries in `0..k`) under the best
/// one-to-one relabeling.
///
/// # Safety
/// `pred` and `truth` must hold `m` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn entclust_hungarian_accuracy(
    pred: *const usize,
    truth: *const usize,
    m: usize,
    k: usize,
    out: *mut f64,
) -> EntclustStatus {
    guard(|| {
        let pred = input(pred, m, "pred")?;
        let truth = input(truth, m, "truth")?;
        let (acc, _) = hungarian_accuracy(pred, truth, k)?;
        write(out, acc, "out")
    })
}

/// K-means (k-means++ seeding, best of `restarts` by inertia) on the dataset's features.
/// Writes one assignment per row into `assignments` and the inertia into `inertia` (may be
/// NULL).
///
/// # Safety
/// `dataset` must be a live handle; `assignments` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn entclust_kmeans(
    dataset: *const EntclustDataset,
    k: usize,
    seed: u64,
    restarts: usize,
    assignments: *mut usize,
    len: usize,
    inertia: *mut f64,
) -> EntclustStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let state = kmeans_fit(ds.features.view(), k, seed, restarts)?;
        output(assignments, len, state.assignments.len(), "assignments")?
            .copy_from_slice(&state.assignments);
        if !inertia.is_null() {
            *inertia = state.inertia;
        }
        Ok(())
    })
}
