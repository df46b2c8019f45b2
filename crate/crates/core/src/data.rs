//! Datasets: MNIST IDX and CSV ingestion, synthetic generators, label corruption and splits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Features (`M × N`) with optional labels and seed mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// Marks examples whose label may be used as weak supervision.
    pub seed_mask: Option<Vec<bool>>,
    pub name: String,
    /// Human-readable description of the transform applied to raw features.
    pub feature_scaling: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            seed_mask: None,
            name: name.into(),
            feature_scaling: "none".into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if let Some(labels) = &self.labels {
            if labels.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: labels.len(),
                });
            }
        }
        if let Some(mask) = &self.seed_mask {
            if mask.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: mask.len(),
                });
            }
            if self.labels.is_none() && mask.iter().any(|&s| s) {
                return Err(Error::invalid("seed mask set on a dataset without labels"));
            }
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features of dataset '{}'",
                self.name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `1 + max label`, or `None` without labels.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|&m| m + 1))
    }

    pub fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("dataset '{}' has no labels", self.name)))
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            seed_mask: self
                .seed_mask
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            name: name.into(),
            feature_scaling: self.feature_scaling.clone(),
        }
    }

    /// Seed labels aligned with rows: `Some(label)` where the seed mask is set.
    pub fn seed_labels(&self) -> Vec<Option<usize>> {
        match (&self.labels, &self.seed_mask) {
            (Some(labels), Some(mask)) => labels
                .iter()
                .zip(mask)
                .map(|(&l, &s)| if s { Some(l) } else { None })
                .collect(),
            _ => vec![None; self.len()],
        }
    }

    /// Marks a stratified random fraction of each class as seeds.
    pub fn with_seed_ratio(mut self, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("seed ratio {ratio} outside [0, 1]")));
        }
        let labels = self.labels_or_err()?.to_vec();
        let k = self.num_classes().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = vec![false; labels.len()];
        for class in 0..k {
            let mut members: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            let count = (ratio * members.len() as f64).round() as usize;
            for &i in members.iter().take(count) {
                mask[i] = true;
            }
        }
        self.seed_mask = Some(mask);
        Ok(self)
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::parse(
                what,
                format!("byte offset {offset}"),
                "file truncated in header",
            )
        })
}

/// Parses an IDX image file (magic 2051). Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::parse(
            what,
            "byte offset 0",
            format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, what)? as usize;
    let rows = read_u32(bytes, 8, what)? as usize;
    let cols = read_u32(bytes, 12, what)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::parse(what, "byte offset 4", "dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::parse(
            what,
            format!("byte offset {}", bytes.len()),
            format!(
                "file truncated: expected {} pixel bytes, found {}",
                need,
                body.len()
            ),
        ));
    }
    if body.len() > need {
        return Err(Error::parse(
            what,
            format!("byte offset {}", 16 + need),
            "trailing bytes after pixel data",
        ));
    }
    Ok((count, rows, cols, body.to_vec()))
}

/// Parses an IDX label file (magic 2049).
pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(Error::parse(
            what,
            "byte offset 0",
            format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, what)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::parse(
            what,
            format!("byte offset {}", 8 + body.len().min(count)),
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [stem.to_string(), dotted] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found in {}", stem, dir.display()),
    )))
}

fn load_idx_pair(dir: &Path, images: &str, labels: &str) -> Result<(Array2<f64>, Vec<usize>)> {
    let img_path = find_file(dir, images)?;
    let lbl_path = find_file(dir, labels)?;
    let img_name = img_path.display().to_string();
    let lbl_name = lbl_path.display().to_string();
    let (count, rows, cols, pixels) = parse_idx_images(&fs::read(&img_path)?, &img_name)?;
    let labels = parse_idx_labels(&fs::read(&lbl_path)?, &lbl_name)?;
    if labels.len() != count {
        return Err(Error::parse(
            lbl_name,
            "byte offset 4",
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| p as f64 / 127.5 - 1.0).collect(),
    )
    .expect("shape checked");
    Ok((features, labels.into_iter().map(usize::from).collect()))
}

/// Loads the MNIST training and test IDX files from `dir`, concatenated (70 000 × 784), with
/// pixels mapped linearly from `[0, 255]` to `[−1, 1]`.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let (train_x, mut train_y) =
        load_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let (test_x, test_y) = load_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_x.ncols(),
            found: test_x.ncols(),
        });
    }
    let features =
        ndarray::concatenate(Axis(0), &[train_x.view(), test_x.view()]).expect("matching widths");
    train_y.extend(test_y);
    Ok(Dataset {
        features,
        labels: Some(train_y),
        seed_mask: None,
        name: "mnist".into(),
        feature_scaling: "linear [0,255] -> [-1,1]".into(),
    })
}

/// Loads a CSV with a header row. `label_column`, when given, names an integer column that is
/// split off as labels.
pub fn load_csv_features(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let what = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(&what, "line 1", e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&what, "line 1", e.to_string()))?
        .clone();
    let label_idx =
        match label_column {
            Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::parse(&what, "line 1", format!("no column named '{name}'"))
            })?),
            None => None,
        };
    let width = headers.len();
    let n = width - usize::from(label_idx.is_some());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record =
            record.map_err(|e| Error::parse(&what, format!("line {line}"), e.to_string()))?;
        if record.len() != width {
            return Err(Error::parse(
                &what,
                format!("line {line}"),
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(col) == label_idx {
                let label = cell.parse::<usize>().map_err(|_| {
                    Error::parse(
                        &what,
                        format!("line {line}"),
                        format!("label '{cell}' is not a class index"),
                    )
                })?;
                labels.push(label);
            } else {
                let v = cell.parse::<f64>().map_err(|_| {
                    Error::parse(
                        &what,
                        format!("line {line}"),
                        format!("'{cell}' is not a number"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        &what,
                        format!("line {line}"),
                        "non-finite value",
                    ));
                }
                values.push(v);
            }
        }
    }
    let m = values.len() / n.max(1);
    if m == 0 {
        return Err(Error::parse(&what, "line 2", "no data rows"));
    }
    let features = Array2::from_shape_vec((m, n), values).expect("rectangular by construction");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(features, label_idx.map(|_| labels), name)
}

/// Writes `f0,…,f{N−1}[,label]` with 17 significant digits so values read back bit-exactly.
pub fn write_csv_features<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    writer.write_record(&header).map_err(csv_err)?;
    for (i, row) in dataset.features.axis_iter(Axis(0)).enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(labels) = &dataset.labels {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_csv_features(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv_features(dataset, std::io::BufWriter::new(file))
}

/// Balanced class sizes: `m / k` each, the first `m mod k` classes get one extra.
fn balanced_counts(m: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| m / k + usize::from(c < m % k)).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two elongated Gaussian clusters in 2-D.
///
/// In a frame rotated by `tilt_degrees`, each cluster has standard deviation `elongation` along
/// the first axis and 1 along the second. The means sit at `∓(4, 3)`, so they are 6 apart
/// across the long axis and staggered by 8 along it; samples closer than 0.5 to the line
/// between the clusters are redrawn, keeping the classes linearly separable. Because of the
/// stagger, the separator equidistant from the two means is not the separating line.
pub fn gen_anisotropic_pair(
    seed: u64,
    m: usize,
    tilt_degrees: f64,
    elongation: f64,
) -> Result<Dataset> {
    if !(elongation >= 1.0 && elongation.is_finite()) {
        return Err(Error::invalid(format!(
            "elongation must be >= 1, got {elongation}"
        )));
    }
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "M must be even and positive, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sin, cos) = tilt_degrees.to_radians().sin_cos();
    let mut features = Array2::zeros((m, 2));
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % 2;
        let sign = if class == 0 { -1.0 } else { 1.0 };
        let (a, b) = loop {
            let a = sign * 4.0 + elongation * normal(&mut rng);
            let b = sign * 3.0 + normal(&mut rng);
            if sign * b >= 0.5 {
                break (a, b);
            }
        };
        features[[i, 0]] = cos * a - sin * b;
        features[[i, 1]] = sin * a + cos * b;
        labels.push(class);
    }
    let mut ds = Dataset::new(features, Some(labels), "anisotropic")?;
    ds.feature_scaling = "raw".into();
    Ok(ds)
}

/// Share of [`gen_margin_gap`] points in class 1.
pub const MARGIN_GAP_MINORITY: f64 = 0.3;

/// Two unbalanced classes in 2-D separated by a vertical corridor `|x| < gap_width / 2`.
///
/// Class 1 holds `round(0.3 M)` points in `x ∈ [gap/2, gap/2 + 4]`, class 0 the rest in the
/// mirror strip, all with `y ∈ [−4, 4]`. The wide corridor gives an unbalanced split, while a
/// near-horizontal line through the middle gives a balanced one that passes between points.
pub fn gen_margin_gap(seed: u64, m: usize, gap_width: f64) -> Result<Dataset> {
    if !(gap_width > 0.0 && gap_width.is_finite()) {
        return Err(Error::invalid(format!(
            "gap width must be > 0, got {gap_width}"
        )));
    }
    if m < 2 {
        return Err(Error::invalid("M must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_gap = gap_width / 2.0;
    let minority = ((m as f64 * MARGIN_GAP_MINORITY).round() as usize).clamp(1, m - 1);
    let mut features = Array2::zeros((m, 2));
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let class = usize::from(i < minority);
        let offset: f64 = rng.random_range(0.0..4.0);
        let x = if class == 0 {
            -half_gap - offset
        } else {
            half_gap + offset
        };
        features[[i, 0]] = x;
        features[[i, 1]] = rng.random_range(-4.0..4.0);
        labels.push(class);
    }
    let mut ds = Dataset::new(features, Some(labels), "margin_gap")?;
    ds.feature_scaling = "raw".into();
    Ok(ds)
}

/// `k` isotropic unit-variance Gaussian blobs in `n` dimensions whose centres are pairwise at
/// least `separation` apart, with balanced labels.
pub fn gen_blobs(seed: u64, m: usize, k: usize, n: usize, separation: f64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::invalid("need at least two blobs"));
    }
    if n == 0 || m < k {
        return Err(Error::invalid("need N >= 1 and M >= K"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Box side chosen so that random placement succeeds easily.
    let side = separation * (k as f64).powf(1.0 / n as f64) * 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::invalid(format!(
                "could not place {k} centres {separation} apart in {n} dimensions"
            )));
        }
        let c: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-side / 2.0..side / 2.0))
            .collect();
        let ok = centers.iter().all(|o| {
            o.iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= separation
        });
        if ok {
            centers.push(c);
        }
    }
    let counts = balanced_counts(m, k);
    let mut features = Array2::zeros((m, n));
    let mut labels = Vec::with_capacity(m);
    let mut i = 0;
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..n {
                features[[i, j]] = centers[class][j] + normal(&mut rng);
            }
            labels.push(class);
            i += 1;
        }
    }
    let mut ds = Dataset::new(features, Some(labels), "blobs")?;
    ds.feature_scaling = "raw".into();
    Ok(ds)
}

/// Fraction `eta` of labels to resample uniformly and the RNG seed for doing so.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub eta: f64,
    pub rng_seed: u64,
}

impl CorruptionSpec {
    pub fn new(eta: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
        }
        Ok(CorruptionSpec { eta, rng_seed })
    }
}

/// Replaces each label with probability `η` by a uniformly drawn class (possibly the same one)
/// and builds soft targets `ỹ = η u + (1 − η) onehot(observed)`.
pub fn corrupt_labels(
    dataset: &Dataset,
    spec: CorruptionSpec,
    k: usize,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let spec = CorruptionSpec::new(spec.eta, spec.rng_seed)?;
    let labels = dataset.labels_or_err()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for K={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let observed: Vec<usize> = labels
        .iter()
        .map(|&l| {
            if rng.random::<f64>() < spec.eta {
                rng.random_range(0..k)
            } else {
                l
            }
        })
        .collect();
    let base = spec.eta / k as f64;
    let mut soft = Array2::from_elem((labels.len(), k), base);
    for (i, &l) in observed.iter().enumerate() {
        soft[[i, l]] += 1.0 - spec.eta;
    }
    Ok((observed, soft))
}

/// Stratified train/test split. Each class contributes `round(test_fraction · size)` test
/// examples (largest remainder across classes so the total is `round(test_fraction · M)`),
/// clamped so every class keeps at least one example on each side.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let m = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match &dataset.labels {
        Some(labels) => {
            let k = dataset.num_classes().unwrap_or(0);
            let mut groups = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                groups[l].push(i);
            }
            groups.retain(|g| !g.is_empty());
            if let Some(g) = groups.iter().find(|g| g.len() < 2) {
                return Err(Error::invalid(format!(
                    "class {} has fewer than two members",
                    labels[g[0]]
                )));
            }
            groups
        }
        None => vec![(0..m).collect()],
    };
    let target_total = (test_fraction * m as f64).round() as usize;
    let exact: Vec<f64> = groups
        .iter()
        .map(|g| test_fraction * g.len() as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &g in order.iter().cycle().take(groups.len() * 2) {
        if assigned >= target_total {
            break;
        }
        if counts[g] < groups[g].len() - 1 {
            counts[g] += 1;
            assigned += 1;
        }
    }
    for (c, g) in counts.iter_mut().zip(&groups) {
        *c = (*c).clamp(1, g.len().saturating_sub(1).max(1));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, &count) in groups.iter().zip(&counts) {
        let mut members = g.clone();
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..count]);
        train.extend_from_slice(&members[count..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        dataset.subset(&train, format!("{}-train", dataset.name)),
        dataset.subset(&test, format!("{}-test", dataset.name)),
    ))
}
