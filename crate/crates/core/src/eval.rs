//! Clustering metrics: Hungarian-matched accuracy, cluster balance and linear margin.

use ndarray::{Array2, ArrayView2, Axis};

use crate::model::SoftmaxModel;
use crate::{Error, Result};

/// Counts of (predicted cluster, true label) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `K × K`, rows are predicted clusters, columns true labels.
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: pred.len(),
            });
        }
        if pred.is_empty() {
            return Err(Error::Empty("predictions"));
        }
        let mut counts = Array2::zeros((k, k));
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= k || t >= k {
                return Err(Error::invalid(format!(
                    "cluster {p} / label {t} outside [0, {k})"
                )));
            }
            counts[[p, t]] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// Minimum-cost perfect assignment on a square matrix. Returns `assignment[row] = column`.
///
/// Shortest augmenting path with row/column potentials, `O(K³)`.
pub fn solve_assignment(cost: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: cost.ncols(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Best one-to-one cluster→label map. Returns `(accuracy, perm)` with `perm[cluster] = label`.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<(f64, Vec<usize>)> {
    let cm = ConfusionMatrix::new(pred, truth, k)?;
    let cost = cm.counts.mapv(|c| -(c as f64));
    let perm = solve_assignment(cost.view())?;
    let matched: u64 = perm
        .iter()
        .enumerate()
        .map(|(c, &l)| cm.counts[[c, l]])
        .sum();
    Ok((matched as f64 / cm.total() as f64, perm))
}

/// Fraction of exact matches without remapping, for label-anchored predictions.
pub fn raw_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Entropy of the empirical cluster-size distribution, in `[0, ln K]`.
pub fn balance_entropy(pred: &[usize], k: usize) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut counts = vec![0usize; k];
    for &p in pred {
        if p >= k {
            return Err(Error::invalid(format!("cluster {p} outside [0, {k})")));
        }
        counts[p] += 1;
    }
    let m = pred.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / m;
            -p * p.ln()
        })
        .sum())
}

/// Smallest distance from any row of `x` to the two-class boundary
/// `(v₁ − v₂)·x + (b₁ − b₂) = 0` of a linear model.
pub fn geometric_margin(model: &SoftmaxModel, x: ArrayView2<'_, f64>) -> Result<f64> {
    if !model.is_linear() || model.num_classes() != 2 {
        return Err(Error::invalid(
            "geometric margin needs a linear two-class model",
        ));
    }
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    let dv = &model.weights.row(0) - &model.weights.row(1);
    let db = model.bias[0] - model.bias[1];
    let norm = dv.dot(&dv).sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("decision boundary undefined: v1 - v2 = 0"));
    }
    let scores = x.dot(&dv);
    Ok(scores
        .iter()
        .map(|s| (s + db).abs())
        .fold(f64::INFINITY, f64::min)
        / norm)
}

/// Argmax predictions of a probability matrix, lowest index on ties.
pub fn argmax_rows(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn identity_and_swap() {
        let labels = vec![0, 1, 1, 0, 2];
        let (acc, perm) = hungarian_accuracy(&labels, &labels, 3).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(perm, vec![0, 1, 2]);
        let swapped: Vec<usize> = vec![1, 0, 0, 1];
        let (acc, perm) = hungarian_accuracy(&swapped, &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(perm, vec![1, 0]);
        assert!(hungarian_accuracy(&[0, 3], &[0, 1], 2).is_err());
        assert!(hungarian_accuracy(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let k = rng.random_range(1..=6);
            let m = rng.random_range(1..60);
            let pred: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
            let truth: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
            let (acc, perm) = hungarian_accuracy(&pred, &truth, k).unwrap();
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
            assert_eq!((acc * m as f64).round() as u64, best);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..k).collect::<Vec<_>>());
            let identity = raw_accuracy(&pred, &truth).unwrap();
            assert!(acc >= identity);
        }
    }

    #[test]
    fn balance_examples() {
        assert_eq!(balance_entropy(&[1, 1, 1], 3).unwrap(), 0.0);
        assert!((balance_entropy(&[0, 1, 2], 3).unwrap() - 3f64.ln()).abs() < 1e-15);
        let v = balance_entropy(&[0, 0, 0, 1], 2).unwrap();
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.5623).abs() < 5e-5);
        assert!(balance_entropy(&[], 2).is_err());
    }

    #[test]
    fn margin_examples() {
        let mut model = SoftmaxModel::zeros(2, 2);
        let x = array![[0.5, 3.0], [2.0, -1.0], [-4.0, 0.0]];
        assert!(geometric_margin(&model, x.view()).is_err());
        model.weights = array![[1.0, 0.0], [0.0, 0.0]];
        assert!((geometric_margin(&model, x.view()).unwrap() - 0.5).abs() < 1e-15);

        model.weights = array![[0.3, -1.2], [-0.7, 0.4]];
        model.bias = array![0.2, -0.5];
        let before = geometric_margin(&model, x.view()).unwrap();
        model.weights *= 17.0;
        model.bias *= 17.0;
        let after = geometric_margin(&model, x.view()).unwrap();
        assert!((before - after).abs() < 1e-12 * before);
    }
}
