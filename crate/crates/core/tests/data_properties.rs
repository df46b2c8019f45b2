use entclust::data::{
    corrupt_labels, gen_anisotropic_pair, gen_blobs, gen_margin_gap, parse_idx_images,
    parse_idx_labels, split, CorruptionSpec, Dataset,
};
use ndarray::{Array2, Axis};

/// Perceptron with bias. Returns the weights if a full pass makes no mistakes.
fn perceptron(x: &Array2<f64>, labels: &[usize], max_passes: usize) -> Option<(Vec<f64>, f64)> {
    let n = x.ncols();
    let mut w = vec![0.0; n];
    let mut b = 0.0;
    for _ in 0..max_passes {
        let mut mistakes = 0;
        for (row, &l) in x.axis_iter(Axis(0)).zip(labels) {
            let t = if l == 1 { 1.0 } else { -1.0 };
            let s: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            if t * s <= 0.0 {
                for (wj, xj) in w.iter_mut().zip(row.iter()) {
                    *wj += t * xj;
                }
                b += t;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return Some((w, b));
        }
    }
    None
}

#[test]
fn anisotropic_pair_is_linearly_separable() {
    for seed in 0..10 {
        let ds = gen_anisotropic_pair(seed, 400, 30.0, 8.0).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 200);
        assert!(
            perceptron(&ds.features, labels, 10_000).is_some(),
            "seed {seed}"
        );
    }
}

#[test]
fn margin_gap_is_separable_with_wide_margin() {
    for seed in 0..10 {
        let gap = 2.0;
        let ds = gen_margin_gap(seed, 300, gap).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        assert!(
            perceptron(&ds.features, labels, 10_000).is_some(),
            "seed {seed}"
        );
        // The vertical line x = 0 separates the classes with margin >= gap/2.
        let margin = ds
            .features
            .axis_iter(Axis(0))
            .zip(labels)
            .map(|(r, &l)| if l == 1 { r[0] } else { -r[0] })
            .fold(f64::INFINITY, f64::min);
        assert!(margin >= gap / 2.0);
    }
}

#[test]
fn widely_separated_blobs_have_perfect_nearest_neighbour_accuracy() {
    let all = gen_blobs(0, 250, 2, 5, 1e3).unwrap();
    let (train, test) = split(&all, 0.2, 1).unwrap();
    let train_labels = train.labels.as_ref().unwrap();
    let test_labels = test.labels.as_ref().unwrap();
    let mut hits = 0;
    for (q, &ql) in test.features.axis_iter(Axis(0)).zip(test_labels) {
        let nearest = train
            .features
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, r)| {
                (
                    i,
                    r.iter()
                        .zip(q.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        hits += usize::from(train_labels[nearest] == ql);
    }
    assert_eq!(hits, test.len());
}

#[test]
fn generators_are_deterministic_and_valid() {
    for seed in [0, 5, 99] {
        let a = gen_anisotropic_pair(seed, 100, 10.0, 3.0).unwrap();
        assert_eq!(a, gen_anisotropic_pair(seed, 100, 10.0, 3.0).unwrap());
        a.validate().unwrap();
        let g = gen_margin_gap(seed, 100, 1.0).unwrap();
        assert_eq!(g, gen_margin_gap(seed, 100, 1.0).unwrap());
        g.validate().unwrap();
        let b = gen_blobs(seed, 100, 4, 3, 5.0).unwrap();
        assert_eq!(b, gen_blobs(seed, 100, 4, 3, 5.0).unwrap());
        b.validate().unwrap();
        assert!(b.labels.as_ref().unwrap().iter().all(|&l| l < 4));
    }
}

#[test]
fn corruption_flip_rate_matches_expectation() {
    let m = 10_000;
    let k = 5;
    let eta = 0.4;
    let ds = Dataset::new(
        Array2::zeros((m, 1)),
        Some((0..m).map(|i| i % k).collect()),
        "flip",
    )
    .unwrap();
    let (observed, _) = corrupt_labels(&ds, CorruptionSpec::new(eta, 17).unwrap(), k).unwrap();
    let flips = observed
        .iter()
        .zip(ds.labels.as_ref().unwrap())
        .filter(|(a, b)| a != b)
        .count() as f64;
    let p = eta * (k - 1) as f64 / k as f64;
    let se = (p * (1.0 - p) / m as f64).sqrt();
    let rate = flips / m as f64;
    assert!(
        (rate - p).abs() <= 3.0 * se,
        "rate {rate}, expected {p} ± {}",
        3.0 * se
    );
}

fn corpus() -> (Vec<u8>, Vec<u8>) {
    let dir = std::env::var("MNIST_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| {
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
        });
    let images = std::fs::read(dir.join("t10k-images-idx3-ubyte")).ok();
    let labels = std::fs::read(dir.join("t10k-labels-idx1-ubyte")).ok();
    match (images, labels) {
        (Some(i), Some(l)) => (i, l),
        _ => {
            let mut i = Vec::new();
            for v in [2051u32, 2, 2, 2] {
                i.extend_from_slice(&v.to_be_bytes());
            }
            i.extend_from_slice(&[0, 64, 128, 255, 1, 2, 3, 4]);
            let mut l = Vec::new();
            for v in [2049u32, 2] {
                l.extend_from_slice(&v.to_be_bytes());
            }
            l.extend_from_slice(&[3, 9]);
            (i, l)
        }
    }
}

#[test]
fn idx_loader_rejects_every_mutated_magic() {
    let (images, labels) = corpus();
    assert!(parse_idx_images(&images, "images").is_ok());
    assert!(parse_idx_labels(&labels, "labels").is_ok());
    for byte in 0..4 {
        for value in 0..=255u8 {
            if value != images[byte] {
                let mut mutated = images.clone();
                mutated[byte] = value;
                assert!(parse_idx_images(&mutated, "images").is_err());
            }
            if value != labels[byte] {
                let mut mutated = labels.clone();
                mutated[byte] = value;
                assert!(parse_idx_labels(&mutated, "labels").is_err());
            }
        }
    }
}
