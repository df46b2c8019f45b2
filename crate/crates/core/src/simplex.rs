//! Points of the probability simplex and the information measures built on them.
//!
//! All logs are natural (nats). `0 · ln 0` is taken as 0. A cross-entropy or KL term that
//! needs `ln 0` with positive weight evaluates to `f64::INFINITY` instead of NaN, so callers can
//! tell a diverging fairness term apart from a numerical failure.

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Tolerance used when validating that data handed to us already lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A distribution over `K` classes. Construction normalizes, so the stored components are
/// non-negative and sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Builds a distribution from non-negative weights, normalizing them.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "probability weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("probability weights sum to zero"));
        }
        let mut probs = weights;
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(ProbVector(probs))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one class");
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::invalid(format!(
                "class {class} out of range for K={k}"
            )));
        }
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest component, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// `K` rows, each a distribution over the `M` data points: the normalized support of a cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSupport {
    support: Array2<f64>,
}

impl ClusterSupport {
    /// Wraps a `K × M` matrix whose rows must already be distributions.
    pub fn from_matrix(support: Array2<f64>) -> Result<Self> {
        for (k, row) in support.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "cluster support row {k} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!(
                    "cluster support row {k} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ClusterSupport { support })
    }

    pub(crate) fn from_matrix_unchecked(support: Array2<f64>) -> Self {
        ClusterSupport { support }
    }

    pub fn num_clusters(&self) -> usize {
        self.support.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.support.ncols()
    }

    /// `S_i^k`.
    pub fn get(&self, cluster: usize, point: usize) -> f64 {
        self.support[[cluster, point]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.support.view()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Softmax of `logits` with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::invalid("softmax needs at least two logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    Ok(ProbVector(probs))
}

/// Unchecked softmax over a mutable row; the hot path used by batched forward passes.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `−Σ p ln p` over a raw slice.
pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| pk * pk.ln())
        .sum::<f64>()
}

/// `−Σ p ln q` over raw slices; infinite when `q_k = 0 < p_k`.
pub(crate) fn cross_entropy_of(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            if qk <= 0.0 {
                return f64::INFINITY;
            }
            acc -= pk * qk.ln();
        }
    }
    acc
}

/// `Σ p ln(p/q)` over raw slices; infinite when `q_k = 0 < p_k`.
pub(crate) fn kl_of(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            if qk <= 0.0 {
                return f64::INFINITY;
            }
            acc += pk * (pk / qk).ln();
        }
    }
    acc.max(0.0)
}

pub fn entropy(p: &ProbVector) -> f64 {
    entropy_of(p.as_slice())
}

pub fn cross_entropy(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(cross_entropy_of(p.as_slice(), q.as_slice()))
}

pub fn kl_div(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(kl_of(p.as_slice(), q.as_slice()))
}

/// Componentwise mean of a non-empty list of distributions.
pub fn mean_prediction(rows: &[ProbVector]) -> Result<ProbVector> {
    let first = rows.first().ok_or(Error::Empty("prediction list"))?;
    let k = first.len();
    let mut mean = vec![0.0; k];
    for row in rows {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
            });
        }
        for (m, p) in mean.iter_mut().zip(row.as_slice()) {
            *m += p;
        }
    }
    ProbVector::new(mean)
}

/// Column means of a matrix whose rows are distributions.
pub(crate) fn mean_row(rows: ArrayView2<'_, f64>) -> Vec<f64> {
    rows.mean_axis(Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}

/// Checks that every row of `rows` lies on the simplex (within [`SIMPLEX_TOL`]).
pub fn check_rows_on_simplex(rows: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if rows.nrows() == 0 {
        return Err(Error::invalid(format!("{what}: no rows")));
    }
    for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
        let mut sum = 0.0;
        for &v in row.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{what}: row {i} has negative or non-finite entries"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "{what}: row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Stacks distributions into an `M × K` matrix.
pub fn stack_rows(rows: &[ProbVector]) -> Result<Array2<f64>> {
    let first = rows.first().ok_or(Error::Empty("distribution list"))?;
    let k = first.len();
    let mut out = Array2::zeros((rows.len(), k));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
            });
        }
        out.row_mut(i)
            .iter_mut()
            .zip(row.as_slice())
            .for_each(|(o, p)| *o = *p);
    }
    Ok(out)
}

fn check_same_len(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!(close(p[0], 0.75, 1e-15) && close(p[1], 0.25, 1e-15));
        let p = softmax(&[5.0, 5.0, 5.0]).unwrap();
        assert!(p.as_slice().iter().all(|&x| close(x, 1.0 / 3.0, 1e-15)));
    }

    #[test]
    fn softmax_rejects_bad_logits() {
        assert!(matches!(
            softmax(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[1.0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy(&ProbVector::uniform(2)), 2f64.ln(), 1e-15));
        assert_eq!(entropy(&ProbVector::one_hot(3, 1).unwrap()), 0.0);
        // independent evaluation: 0.5623351446188083
        assert!(close(
            entropy(&pv(&[0.75, 0.25])),
            0.5623351446188083,
            1e-12
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let u = ProbVector::uniform(2);
        for p in [pv(&[0.3, 0.7]), pv(&[1.0, 0.0]), u.clone()] {
            assert!(close(cross_entropy(&p, &u).unwrap(), 2f64.ln(), 1e-15));
        }
        let p = pv(&[0.9, 0.1]);
        assert!(close(
            cross_entropy(&p, &p).unwrap(),
            0.3250829733914482,
            1e-12
        ));
        let ce = cross_entropy(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap();
        assert_eq!(ce, f64::INFINITY);
        assert!(matches!(
            cross_entropy(&p, &ProbVector::uniform(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let u = ProbVector::uniform(4);
        assert_eq!(kl_div(&u, &u).unwrap(), 0.0);
        let kl = kl_div(&pv(&[0.5, 0.5]), &pv(&[0.9, 0.1])).unwrap();
        assert!(close(kl, 0.5108256237659907, 1e-12));
        let kl = kl_div(&pv(&[0.9, 0.1]), &pv(&[1.0, 0.0])).unwrap();
        assert_eq!(kl, f64::INFINITY);
    }

    #[test]
    fn mean_prediction_examples() {
        let m = mean_prediction(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 0.5]);
        let p = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(mean_prediction(&[p.clone()]).unwrap(), p);
        let m = mean_prediction(&[pv(&[0.9, 0.1]), pv(&[0.7, 0.3]), pv(&[0.2, 0.8])]).unwrap();
        assert!(close(m[0], 0.6, 1e-15) && close(m[1], 0.4, 1e-15));
        assert!(matches!(mean_prediction(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn prob_vector_construction_normalizes() {
        let p = ProbVector::new(vec![2.0, 6.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert!(ProbVector::new(vec![0.0, 0.0]).is_err());
        assert!(ProbVector::new(vec![-1.0, 2.0]).is_err());
        assert!(ProbVector::one_hot(2, 2).is_err());
    }

    #[test]
    fn cluster_support_validates_rows() {
        let ok = ndarray::array![[0.5, 0.5], [1.0, 0.0]];
        assert!(ClusterSupport::from_matrix(ok).is_ok());
        let bad = ndarray::array![[0.5, 0.4], [1.0, 0.0]];
        assert!(ClusterSupport::from_matrix(bad).is_err());
    }

    fn simplex_point(k: usize) -> impl Strategy<Value = ProbVector> {
        prop::collection::vec(1e-6f64..1.0, k).prop_map(|w| ProbVector::new(w).unwrap())
    }

    fn simplex_pair() -> impl Strategy<Value = (ProbVector, ProbVector)> {
        (2usize..8).prop_flat_map(|k| (simplex_point(k), simplex_point(k)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn kl_is_non_negative((p, q) in simplex_pair()) {
            prop_assert!(kl_div(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_div(&p, &p).unwrap() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_stays_on_simplex(logits in prop::collection::vec(-1e4f64..1e4, 2..12)) {
            let p = softmax(&logits).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn gibbs_inequality((p, q) in simplex_pair()) {
            let h = entropy(&p);
            let ce = cross_entropy(&p, &q).unwrap();
            prop_assert!(ce >= h - 1e-12);
            prop_assert!((cross_entropy(&p, &p).unwrap() - h).abs() <= 1e-12);
        }

        #[test]
        fn entropy_is_permutation_invariant(p in simplex_point(6), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = p.as_slice().to_vec();
            shuffled.shuffle(&mut rng);
            let q = ProbVector::new(shuffled).unwrap();
            prop_assert!((entropy(&p) - entropy(&q)).abs() <= 1e-12);
            prop_assert!(entropy(&p) <= (6f64).ln() + 1e-12);
        }
    }
}
