//! Lloyd's K-means with k-means++ seeding.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansState {
    /// `K × N`.
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centres.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart, from the expanded distances.
    pub inertia_trace: Vec<f64>,
}

fn row_norms(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}

/// Nearest-centre assignment via `‖x‖² − 2x·μ + ‖μ‖²`. Returns assignments and the
/// (clamped) squared distances.
fn assign(
    x: ArrayView2<'_, f64>,
    x_norms: &Array1<f64>,
    centers: &Array2<f64>,
) -> (Vec<usize>, Vec<f64>) {
    let c_norms = row_norms(centers.view());
    let cross = x.dot(&centers.t());
    let mut labels = Vec::with_capacity(x.nrows());
    let mut dists = Vec::with_capacity(x.nrows());
    for (i, row) in cross.axis_iter(Axis(0)).enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &c) in row.iter().enumerate() {
            let d = x_norms[i] - 2.0 * c + c_norms[k];
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        labels.push(best);
        dists.push(best_d.max(0.0));
    }
    (labels, dists)
}

fn squared_distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Inertia computed from explicit differences.
pub fn inertia(x: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>, assignments: &[usize]) -> f64 {
    x.axis_iter(Axis(0))
        .zip(assignments)
        .map(|(row, &k)| squared_distance(row, centers.row(k)))
        .sum()
}

fn kmeans_pp(
    x: ArrayView2<'_, f64>,
    x_norms: &Array1<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let (m, n) = x.dim();
    let mut centers = Array2::zeros((k, n));
    let first = rng.random_range(0..m);
    centers.row_mut(0).assign(&x.row(first));
    let mut closest: Vec<f64> = (0..m)
        .map(|i| squared_distance(x.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centers.row_mut(c).assign(&x.row(pick));
        let new_center = centers.slice(ndarray::s![c..c + 1, ..]).to_owned();
        let (_, d) = assign(x, x_norms, &new_center);
        for (cur, nd) in closest.iter_mut().zip(d) {
            if nd < *cur {
                *cur = nd;
            }
        }
    }
    centers
}

fn lloyd(
    x: ArrayView2<'_, f64>,
    x_norms: &Array1<f64>,
    mut centers: Array2<f64>,
    max_iterations: usize,
) -> KMeansState {
    let (m, n) = x.dim();
    let k = centers.nrows();
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (mut labels, dists) = assign(x, x_norms, &centers);
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        // Re-seed empty clusters at the point farthest from its centre.
        let mut taken = vec![false; m];
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .filter(|&i| !taken[i] && counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = c;
                    counts[c] = 1;
                    taken[i] = true;
                    centers.row_mut(c).assign(&x.row(i));
                }
            }
        }
        let step_inertia = if taken.iter().any(|&t| t) {
            inertia(x, centers.view(), &labels)
        } else {
            dists.iter().sum()
        };
        trace.push(step_inertia);
        let changed = labels != assignments;
        assignments = labels;
        if !changed || iterations >= max_iterations {
            break;
        }
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, n));
        for (row, &l) in x.axis_iter(Axis(0)).zip(&assignments) {
            let mut s = sums.row_mut(l);
            s += &row;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
    }
    let final_inertia = inertia(x, centers.view(), &assignments);
    KMeansState {
        centers,
        assignments,
        inertia: final_inertia,
        iterations,
        inertia_trace: trace,
    }
}

/// Best of `restarts` k-means++ initialised Lloyd runs, by final inertia. Lloyd stops when
/// assignments repeat or after `max_iterations` centre updates.
pub fn kmeans_fit_with(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iterations: usize,
) -> Result<KMeansState> {
    let m = x.nrows();
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if k > m {
        return Err(Error::invalid(format!(
            "K={k} exceeds number of points M={m}"
        )));
    }
    if restarts == 0 {
        return Err(Error::invalid("need at least one restart"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let x_norms = row_norms(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansState> = None;
    for _ in 0..restarts {
        let init = kmeans_pp(x, &x_norms, k, &mut rng);
        let state = lloyd(x, &x_norms, init, max_iterations);
        if best.as_ref().is_none_or(|b| state.inertia < b.inertia) {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans_fit(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansState> {
    kmeans_fit_with(x, k, seed, restarts, DEFAULT_MAX_ITERATIONS)
}
